#include "hybridmap/transport.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace hmap {

namespace {

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}
    template <typename U>
    void uint(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }

private:
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    template <typename U>
    U uint(const char* field) {
        need(sizeof(U), field);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(in_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    double f64(const char* field) { return std::bit_cast<double>(uint<std::uint64_t>(field)); }
    void need(std::size_t n, const char* field) const {
        if (in_.size() - pos_ < n) throw TruncatedError(field, std::string("frame message truncated in ") + field);
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* field) {
        need(n, field);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

struct Header {
    FrameMessage msg; // everything but the payload
    std::uint64_t payload_length = 0;
};

Header decode_header(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    Header h;
    const auto magic = r.take(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), FrameMessage::kMagic.begin(),
                    [](std::uint8_t a, char b) { return a == static_cast<std::uint8_t>(b); }))
        throw BadMagicError("magic", "bad frame magic");
    const auto version = r.uint<std::uint16_t>("version");
    if (version != FrameMessage::kVersion)
        throw UnsupportedVersionError("version", "unsupported protocol version " + std::to_string(version));
    FrameMessage& m = h.msg;
    m.frame_id = r.uint<std::uint64_t>("frame_id");
    m.timestamp = r.f64("timestamp");
    m.width = r.uint<std::uint32_t>("width");
    m.height = r.uint<std::uint32_t>("height");
    m.fx = r.f64("fx");
    m.fy = r.f64("fy");
    m.cx = r.f64("cx");
    m.cy = r.f64("cy");
    for (double& v : m.pose) v = r.f64("pose");
    const auto fmt = r.uint<std::uint8_t>("payload_format");
    if (fmt != static_cast<std::uint8_t>(PayloadFormat::Rgb8))
        throw InvalidMessageError("payload_format", "unknown payload format " + std::to_string(fmt));
    m.format = static_cast<PayloadFormat>(fmt);
    h.payload_length = r.uint<std::uint64_t>("payload_length");
    const std::uint64_t expected = std::uint64_t(m.width) * m.height * 3;
    if (h.payload_length != expected)
        throw LengthMismatchError("payload_length", "payload length " + std::to_string(h.payload_length) +
                                                        " does not match " + std::to_string(m.width) + "x" +
                                                        std::to_string(m.height) + " RGB8");
    return h;
}

} // namespace

bool operator==(const FrameMessage& a, const FrameMessage& b) {
    auto bits = [](double v) { return std::bit_cast<std::uint64_t>(v); };
    if (a.frame_id != b.frame_id || bits(a.timestamp) != bits(b.timestamp) || a.width != b.width ||
        a.height != b.height || bits(a.fx) != bits(b.fx) || bits(a.fy) != bits(b.fy) || bits(a.cx) != bits(b.cx) ||
        bits(a.cy) != bits(b.cy) || a.format != b.format || a.payload != b.payload)
        return false;
    for (int i = 0; i < 16; ++i)
        if (bits(a.pose[i]) != bits(b.pose[i])) return false;
    return true;
}

FrameMessage FrameMessage::from_frame(const Frame& f) {
    FrameMessage m;
    m.frame_id = f.frame_id;
    m.timestamp = f.timestamp;
    m.width = static_cast<std::uint32_t>(f.rgb.width());
    m.height = static_cast<std::uint32_t>(f.rgb.height());
    m.fx = f.intrinsics.fx;
    m.fy = f.intrinsics.fy;
    m.cx = f.intrinsics.cx;
    m.cy = f.intrinsics.cy;
    const Mat4 p = f.pose.matrix();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m.pose[4 * r + c] = p(r, c);
    m.payload.resize(f.rgb.size() * 3);
    for (std::size_t i = 0; i < f.rgb.size(); ++i) {
        m.payload[3 * i] = f.rgb[i].r;
        m.payload[3 * i + 1] = f.rgb[i].g;
        m.payload[3 * i + 2] = f.rgb[i].b;
    }
    return m;
}

Pose FrameMessage::pose_value() const {
    Mat4 p;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) p(r, c) = pose[4 * r + c];
    return Pose(p.topLeftCorner<3, 3>(), p.topRightCorner<3, 1>());
}

Intrinsics FrameMessage::intrinsics() const {
    return {fx, fy, cx, cy, static_cast<int>(width), static_cast<int>(height)};
}

Frame FrameMessage::to_frame() const {
    Frame f;
    f.frame_id = frame_id;
    f.timestamp = timestamp;
    f.intrinsics = intrinsics();
    f.pose = pose_value();
    f.rgb = RgbImage(static_cast<int>(width), static_cast<int>(height));
    for (std::size_t i = 0; i < f.rgb.size() && 3 * i + 2 < payload.size(); ++i)
        f.rgb[i] = {payload[3 * i], payload[3 * i + 1], payload[3 * i + 2]};
    return f;
}

void validate(const FrameMessage& m) {
    if (m.format != PayloadFormat::Rgb8) throw InvalidMessageError("payload_format", "unknown payload format");
    if (m.payload.size() != std::uint64_t(m.width) * m.height * 3)
        throw LengthMismatchError("payload_length", "payload size does not match width x height x 3");
    if (m.width > 0x7fffffffu || m.height > 0x7fffffffu) throw InvalidMessageError("width", "image too large");
    if (!m.pose_value().is_valid(1e-6)) throw InvalidMessageError("pose", "pose rotation is not orthonormal");
    const double last_row[4] = {m.pose[12], m.pose[13], m.pose[14], m.pose[15]};
    if (last_row[0] != 0.0 || last_row[1] != 0.0 || last_row[2] != 0.0 || last_row[3] != 1.0)
        throw InvalidMessageError("pose", "pose last row must be 0 0 0 1");
}

std::vector<std::uint8_t> encode(const FrameMessage& m) {
    validate(m);
    std::vector<std::uint8_t> out;
    out.reserve(FrameMessage::kHeaderSize + m.payload.size());
    Writer w(out);
    w.bytes(FrameMessage::kMagic.data(), 4);
    w.uint(FrameMessage::kVersion);
    w.uint(m.frame_id);
    w.f64(m.timestamp);
    w.uint(m.width);
    w.uint(m.height);
    w.f64(m.fx);
    w.f64(m.fy);
    w.f64(m.cx);
    w.f64(m.cy);
    for (double v : m.pose) w.f64(v);
    w.uint(static_cast<std::uint8_t>(m.format));
    w.uint(static_cast<std::uint64_t>(m.payload.size()));
    w.bytes(m.payload.data(), m.payload.size());
    return out;
}

FrameMessage decode(std::span<const std::uint8_t> bytes) {
    Header h = decode_header(bytes);
    const std::size_t available = bytes.size() - std::min(bytes.size(), FrameMessage::kHeaderSize);
    if (available < h.payload_length)
        throw TruncatedError("payload_length", "frame payload truncated: " + std::to_string(available) + " of " +
                                                   std::to_string(h.payload_length) + " bytes");
    if (available > h.payload_length)
        throw LengthMismatchError("payload_length", "trailing bytes after frame payload");
    const auto payload = bytes.subspan(FrameMessage::kHeaderSize);
    h.msg.payload.assign(payload.begin(), payload.end());
    return std::move(h.msg);
}

// ---- streams ---------------------------------------------------------------------------------------

void Pipe::write(std::span<const std::uint8_t> bytes) {
    {
        std::lock_guard lock(mu_);
        if (closed_) throw IoError("write to a closed pipe");
        data_.insert(data_.end(), bytes.begin(), bytes.end());
    }
    cv_.notify_all();
}

std::size_t Pipe::read(std::span<std::uint8_t> buffer) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !data_.empty() || closed_; });
    const std::size_t n = std::min(buffer.size(), data_.size());
    std::copy_n(data_.begin(), n, buffer.begin());
    data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(n));
    return n;
}

void Pipe::close_write() {
    {
        std::lock_guard lock(mu_);
        closed_ = true;
    }
    cv_.notify_all();
}

void write_message(ByteStream& out, const FrameMessage& msg) { out.write(encode(msg)); }

namespace {

/// Fills `buf` completely; returns the number of bytes read before end of stream.
std::size_t read_fully(ByteStream& in, std::span<std::uint8_t> buf) {
    std::size_t got = 0;
    while (got < buf.size()) {
        const std::size_t n = in.read(buf.subspan(got));
        if (n == 0) break;
        got += n;
    }
    return got;
}

} // namespace

std::optional<FrameMessage> read_message(ByteStream& in) {
    std::vector<std::uint8_t> bytes(FrameMessage::kHeaderSize);
    const std::size_t got = read_fully(in, bytes);
    if (got == 0) return std::nullopt;
    bytes.resize(got);
    Header h = decode_header(bytes); // throws TruncatedError for a short header
    std::vector<std::uint8_t>& payload = h.msg.payload;
    payload.resize(h.payload_length);
    if (read_fully(in, payload) != h.payload_length)
        throw TruncatedError("payload_length", "stream ended inside a frame payload");
    return std::move(h.msg);
}

// ---- scale calibration -----------------------------------------------------------------------------

double estimate_scale(std::span<const ScaleSample> samples) {
    if (samples.size() < 2) throw ContractViolation("estimate_scale: need at least two samples");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
        num += std::abs(samples[i + 1].altitude - samples[i].altitude);
        den += (samples[i + 1].position - samples[i].position).norm();
    }
    if (!(den > 0.0)) throw DegenerateMotionError("estimate_scale: tracker positions did not move");
    return num / den;
}

const char* to_string(FsmState s) {
    switch (s) {
    case FsmState::Initial: return "Initial";
    case FsmState::Tracking: return "Tracking";
    case FsmState::Training: return "Training";
    case FsmState::Scaled: return "Scaled";
    }
    return "?";
}

const char* to_string(FsmEventKind e) {
    switch (e) {
    case FsmEventKind::TakeoffComplete: return "TakeoffComplete";
    case FsmEventKind::TrackerStarted: return "TrackerStarted";
    case FsmEventKind::BeginTraining: return "BeginTraining";
    case FsmEventKind::Sample: return "Sample";
    case FsmEventKind::EndTraining: return "EndTraining";
    }
    return "?";
}

void ScaleFsm::step(const FsmEvent& e) {
    auto illegal = [&] {
        throw FsmError(state_, e.kind,
                       std::string("event ") + to_string(e.kind) + " is not allowed in state " + to_string(state_));
    };
    switch (e.kind) {
    case FsmEventKind::TakeoffComplete:
        if (state_ != FsmState::Initial) illegal();
        airborne_ = true;
        return;
    case FsmEventKind::TrackerStarted:
        if (state_ != FsmState::Initial) illegal();
        state_ = FsmState::Tracking;
        return;
    case FsmEventKind::BeginTraining:
        if (state_ != FsmState::Tracking) illegal();
        state_ = FsmState::Training;
        return;
    case FsmEventKind::Sample:
        if (state_ != FsmState::Training) illegal();
        samples_.push_back(e.sample);
        return;
    case FsmEventKind::EndTraining: {
        if (state_ != FsmState::Training) illegal();
        if (samples_.size() < 2)
            throw InsufficientDataError(state_, e.kind, "EndTraining needs at least two samples, have " +
                                                            std::to_string(samples_.size()));
        scale_ = estimate_scale(samples_); // may throw DegenerateMotionError; state stays Training
        state_ = FsmState::Scaled;
        return;
    }
    }
}

// ---- replay ----------------------------------------------------------------------------------------

ReplayScript parse_replay_script(std::istream& in) {
    ReplayScript script;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string when, what;
        if (!(ls >> when)) continue;
        auto fail = [&](const std::string& why) {
            throw ConfigError("replay script line " + std::to_string(line_no) + ": " + why);
        };
        if (!(ls >> what)) fail("expected: FRAME EVENT");
        FsmEventKind kind;
        if (what == "takeoff") kind = FsmEventKind::TakeoffComplete;
        else if (what == "tracker_started") kind = FsmEventKind::TrackerStarted;
        else if (what == "begin_training") kind = FsmEventKind::BeginTraining;
        else if (what == "sample") kind = FsmEventKind::Sample;
        else if (what == "end_training") kind = FsmEventKind::EndTraining;
        else fail("unknown event '" + what + "'");
        std::uint64_t a = 0, b = 0;
        try {
            const auto dash = when.find('-');
            std::size_t used = 0;
            if (dash == std::string::npos) {
                a = b = std::stoull(when, &used);
                if (used != when.size()) fail("bad frame '" + when + "'");
            } else {
                a = std::stoull(when.substr(0, dash), &used);
                b = std::stoull(when.substr(dash + 1));
                if (kind != FsmEventKind::Sample) fail("frame ranges are only allowed for sample");
                if (b < a) fail("empty frame range");
            }
        } catch (const std::logic_error&) {
            fail("bad frame '" + when + "'");
        }
        for (std::uint64_t f = a; f <= b; ++f) script.push_back({f, kind});
    }
    std::stable_sort(script.begin(), script.end(),
                     [](const ScriptEvent& x, const ScriptEvent& y) { return x.frame_id < y.frame_id; });
    return script;
}

ReplayScript load_replay_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open replay script " + path.string());
    return parse_replay_script(in);
}

ReplayResult replay(const SequenceDataset& dataset, const ReplayScript& script, const FrameSink& sink,
                    const ReplayOptions& opts) {
    ScaleFsm fsm;
    ReplayResult result;
    auto next_event = script.begin();
    const auto start = std::chrono::steady_clock::now();
    const auto& tracker = dataset.tracker();
    for (std::size_t i = 0; i < tracker.size(); ++i) {
        const std::uint64_t id = tracker[i].frame_id;
        // events scheduled for frames that are not in the dataset fire before the next frame present
        for (; next_event != script.end() && next_event->frame_id <= id; ++next_event) {
            if (next_event->kind != FsmEventKind::Sample) {
                fsm.step(FsmEvent::of(next_event->kind));
                continue;
            }
            const auto alt = dataset.altitudes().find(id);
            if (alt == dataset.altitudes().end())
                throw DatasetError("no altitude recorded for frame " + std::to_string(id));
            fsm.step(FsmEvent::sample_of(alt->second, tracker[i].pose.translation()));
        }
        if (fsm.state() != FsmState::Scaled) continue;

        if (!opts.max_speed)
            std::this_thread::sleep_until(start + std::chrono::duration<double>(static_cast<double>(i) /
                                                                                dataset.meta().fps));
        Frame f;
        f.frame_id = id;
        f.timestamp = static_cast<double>(i) / dataset.meta().fps;
        f.intrinsics = dataset.meta().intrinsics;
        f.pose = Pose(tracker[i].pose.rotation(), tracker[i].pose.translation() * *fsm.scale());
        f.rgb = dataset.rgb(id);
        if (f.rgb.width() != f.intrinsics.width || f.rgb.height() != f.intrinsics.height)
            throw DatasetError("RGB frame " + std::to_string(id) + " does not match the dataset resolution");
        sink(FrameMessage::from_frame(f));
        ++result.frames_sent;
    }
    result.final_state = fsm.state();
    result.scale = fsm.scale();
    return result;
}

} // namespace hmap
