#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hybridmap/dataset.hpp"
#include "hybridmap/geometry.hpp"

namespace hmap {

// ---- wire protocol ---------------------------------------------------------------------------------

enum class PayloadFormat : std::uint8_t { Rgb8 = 0 };

/// One streamed frame. Little-endian layout:
///   "HMFR" | u16 version | u64 frame_id | f64 timestamp | u32 width | u32 height | f64 fx fy cx cy |
///   16 x f64 pose (row-major, world from camera) | u8 payload_format | u64 payload_length | payload
struct FrameMessage {
    static constexpr std::array<char, 4> kMagic{'H', 'M', 'F', 'R'};
    static constexpr std::uint16_t kVersion = 1;
    static constexpr std::size_t kHeaderSize = 4 + 2 + 8 + 8 + 4 + 4 + 4 * 8 + 16 * 8 + 1 + 8;

    std::uint64_t frame_id = 0;
    double timestamp = 0.0;
    std::uint32_t width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    std::array<double, 16> pose{};
    PayloadFormat format = PayloadFormat::Rgb8;
    std::vector<std::uint8_t> payload;

    /// Bitwise comparison of every field (so -0.0 != 0.0 and NaN == NaN with the same bits).
    friend bool operator==(const FrameMessage& a, const FrameMessage& b);

    static FrameMessage from_frame(const Frame& f);
    Frame to_frame() const;
    Pose pose_value() const;
    Intrinsics intrinsics() const;
};

/// Malformed bytes on the wire; `field()` names the offending header field.
class ProtocolError : public Error {
public:
    ProtocolError(std::string field, const std::string& what) : Error(what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};
class BadMagicError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};
class UnsupportedVersionError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};
/// Payload length disagrees with the header or the bytes available.
class LengthMismatchError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};
/// The byte sequence ends before the message does.
class TruncatedError : public LengthMismatchError {
public:
    using LengthMismatchError::LengthMismatchError;
};
/// Well-framed but semantically invalid content (unknown payload format, non-rigid pose).
class InvalidMessageError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

/// Throws InvalidMessageError when the message breaks its invariants.
void validate(const FrameMessage& msg);
std::vector<std::uint8_t> encode(const FrameMessage& msg);
/// Exactly one message; trailing bytes are a LengthMismatchError.
FrameMessage decode(std::span<const std::uint8_t> bytes);

// ---- byte streams ----------------------------------------------------------------------------------

/// Reliable ordered byte stream.
class ByteStream {
public:
    virtual ~ByteStream() = default;
    virtual void write(std::span<const std::uint8_t> bytes) = 0;
    /// Blocks until at least one byte is available; returns 0 at end of stream.
    virtual std::size_t read(std::span<std::uint8_t> buffer) = 0;
    /// Signals end of stream to the reader.
    virtual void close_write() = 0;
};

/// In-process stream; one thread writes, another reads.
class Pipe : public ByteStream {
public:
    void write(std::span<const std::uint8_t> bytes) override;
    std::size_t read(std::span<std::uint8_t> buffer) override;
    void close_write() override;

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::uint8_t> data_;
    bool closed_ = false;
};

void write_message(ByteStream& out, const FrameMessage& msg);
/// Next message, or nullopt on a clean end of stream between messages. Throws TruncatedError when the
/// stream ends mid-message and the other ProtocolErrors on malformed headers.
std::optional<FrameMessage> read_message(ByteStream& in);

// ---- scale calibration -----------------------------------------------------------------------------

struct ScaleSample {
    double altitude = 0.0; // metric
    Vec3 position = Vec3::Zero(); // tracker frame
};

class DegenerateMotionError : public Error {
public:
    using Error::Error;
};

/// Sum of absolute altitude changes over the summed tracker path length. Throws ContractViolation with
/// fewer than two samples and DegenerateMotionError when the tracker did not move.
double estimate_scale(std::span<const ScaleSample> samples);

enum class FsmState { Initial, Tracking, Training, Scaled };
enum class FsmEventKind { TakeoffComplete, TrackerStarted, BeginTraining, Sample, EndTraining };

struct FsmEvent {
    FsmEventKind kind = FsmEventKind::TakeoffComplete;
    ScaleSample sample; // used by Sample only

    static FsmEvent of(FsmEventKind k) { return {k, {}}; }
    static FsmEvent sample_of(double altitude, const Vec3& position) {
        return {FsmEventKind::Sample, {altitude, position}};
    }
};

const char* to_string(FsmState s);
const char* to_string(FsmEventKind e);

class FsmError : public Error {
public:
    FsmError(FsmState state, FsmEventKind event, const std::string& what)
        : Error(what), state_(state), event_(event) {}
    FsmState state() const { return state_; }
    FsmEventKind event() const { return event_; }

private:
    FsmState state_;
    FsmEventKind event_;
};
class InsufficientDataError : public FsmError {
public:
    using FsmError::FsmError;
};

/// Client calibration states:
///   Initial (TakeoffComplete keeps it there) -TrackerStarted-> Tracking -BeginTraining-> Training
///   (Sample appends) -EndTraining-> Scaled.
/// Anything else throws FsmError and leaves the machine unchanged.
class ScaleFsm {
public:
    FsmState state() const { return state_; }
    const std::vector<ScaleSample>& samples() const { return samples_; }
    /// Set exactly in the Scaled state.
    std::optional<double> scale() const { return scale_; }
    bool airborne() const { return airborne_; }

    void step(const FsmEvent& e);

private:
    FsmState state_ = FsmState::Initial;
    std::vector<ScaleSample> samples_;
    std::optional<double> scale_;
    bool airborne_ = false;
};

// ---- replay ----------------------------------------------------------------------------------------

/// Scripted operator action, fired just before frame `frame_id` is handled. Sample events take the
/// altitude and tracker position recorded for that frame.
struct ScriptEvent {
    std::uint64_t frame_id = 0;
    FsmEventKind kind = FsmEventKind::TakeoffComplete;
};
using ReplayScript = std::vector<ScriptEvent>;

/// Lines of "frame_id event" with event one of takeoff, tracker_started, begin_training, sample,
/// end_training; "frame_a-frame_b sample" samples every frame in the inclusive range.
ReplayScript parse_replay_script(std::istream& in);
ReplayScript load_replay_script(const std::filesystem::path& path);

struct ReplayOptions {
    bool max_speed = false;
};

struct ReplayResult {
    std::size_t frames_sent = 0;
    FsmState final_state = FsmState::Initial;
    std::optional<double> scale;
};

using FrameSink = std::function<void(const FrameMessage&)>;

/// Walks the dataset in trajectory order, drives the FSM with the script and, once Scaled, emits each
/// frame with its tracker pose's translation multiplied by the estimated scale. Paced at the dataset
/// frame rate unless max_speed is set.
ReplayResult replay(const SequenceDataset& dataset, const ReplayScript& script, const FrameSink& sink,
                    const ReplayOptions& opts = {});

} // namespace hmap
