#include "hybridmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "hybridmap/dataset.hpp"
#include "hybridmap/image_io.hpp"

namespace hmap {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr std::int16_t kLabelNone = -1;
constexpr std::int16_t kLabelStatic = -2;

bool inside_box(const BoxPrimitive& b, const Vec3& p) {
    return (p.array() > b.min.array()).all() && (p.array() < b.max.array()).all();
}

Rgb8 parse_colour(std::istringstream& ls, Rgb8 fallback) {
    int r, g, b;
    if (ls >> r >> g >> b) return {static_cast<std::uint8_t>(std::clamp(r, 0, 255)),
                                   static_cast<std::uint8_t>(std::clamp(g, 0, 255)),
                                   static_cast<std::uint8_t>(std::clamp(b, 0, 255))};
    return fallback;
}

} // namespace

std::size_t SceneSpec::frame_count() const {
    if (!(fps > 0.0) || !(duration > 0.0)) return 0;
    return static_cast<std::size_t>(std::ceil(duration * fps - 1e-9));
}

void SceneSpec::validate() const {
    try {
        intrinsics.validate();
    } catch (const ContractViolation& e) {
        throw ConfigError(std::string("scene: ") + e.what());
    }
    if (!(fps > 0.0)) throw ConfigError("scene: fps must be positive");
    if (!(duration > 0.0)) throw ConfigError("scene: duration must be positive");
    if (camera.empty()) throw ConfigError("scene: no camera waypoints");
    for (std::size_t i = 1; i < camera.size(); ++i)
        if (!(camera[i].t > camera[i - 1].t)) throw ConfigError("scene: camera waypoints must have increasing times");
    const BoxPrimitive* room = nullptr;
    for (const auto& b : boxes) {
        if (!(b.max.array() > b.min.array()).all()) throw ConfigError("scene: box with max <= min");
        if (b.hollow) room = &b;
    }
    for (const auto& p : planes)
        if (std::abs(p.normal.norm() - 1.0) > 1e-9) throw ConfigError("scene: plane normal must be unit length");
    for (const auto& w : camera) {
        if ((w.target - w.eye).norm() < 1e-9) throw ConfigError("scene: camera target equals eye");
        for (const auto& b : boxes) {
            if (!b.hollow && inside_box(b, w.eye)) throw ConfigError("scene: camera waypoint inside a solid box");
            if (b.hollow && !inside_box(b, w.eye)) throw ConfigError("scene: camera waypoint outside the room");
        }
    }
    for (const auto& person : people) {
        if (person.path.empty()) throw ConfigError("scene: person " + std::to_string(person.id) + " has no waypoints");
        if (!(person.scale > 0.0) || !(person.walk_period > 0.0))
            throw ConfigError("scene: person scale and walk period must be positive");
        for (std::size_t i = 1; i < person.path.size(); ++i)
            if (!(person.path[i].t > person.path[i - 1].t))
                throw ConfigError("scene: person waypoints must have increasing times");
        if (room)
            for (const auto& w : person.path)
                if (w.position.x() <= room->min.x() || w.position.x() >= room->max.x() ||
                    w.position.y() <= room->min.y() || w.position.y() >= room->max.y())
                    throw ConfigError("scene: person " + std::to_string(person.id) + " walks outside the room");
    }
}

SceneSpec parse_scene(std::istream& in) {
    SceneSpec spec;
    bool have_intrinsics = false;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw ConfigError("scene line " + std::to_string(line_no) + ": " + what);
    };
    auto find_person = [&](int id) -> PersonSpec& {
        for (auto& p : spec.people)
            if (p.id == id) return p;
        fail("unknown person " + std::to_string(id));
        return spec.people.front(); // unreachable
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "image") {
            if (!(ls >> spec.intrinsics.width >> spec.intrinsics.height)) fail("expected: image W H");
        } else if (key == "intrinsics") {
            if (!(ls >> spec.intrinsics.fx >> spec.intrinsics.fy >> spec.intrinsics.cx >> spec.intrinsics.cy))
                fail("expected: intrinsics fx fy cx cy");
            have_intrinsics = true;
        } else if (key == "fps") {
            if (!(ls >> spec.fps)) fail("expected: fps F");
        } else if (key == "duration") {
            if (!(ls >> spec.duration)) fail("expected: duration SECONDS");
        } else if (key == "room" || key == "box") {
            BoxPrimitive b;
            b.hollow = key == "room";
            if (!(ls >> b.min.x() >> b.min.y() >> b.min.z() >> b.max.x() >> b.max.y() >> b.max.z()))
                fail("expected: " + key + " x0 y0 z0 x1 y1 z1 [r g b]");
            b.colour = parse_colour(ls, b.hollow ? Rgb8{200, 200, 190} : Rgb8{120, 140, 170});
            spec.boxes.push_back(b);
        } else if (key == "plane") {
            PlanePrimitive p;
            if (!(ls >> p.normal.x() >> p.normal.y() >> p.normal.z() >> p.offset))
                fail("expected: plane nx ny nz offset [r g b]");
            const double n = p.normal.norm();
            if (!(n > 0.0)) fail("plane normal is zero");
            p.normal /= n;
            p.offset /= n;
            p.colour = parse_colour(ls, p.colour);
            spec.planes.push_back(p);
        } else if (key == "camera") {
            CameraWaypoint w;
            if (!(ls >> w.t >> w.eye.x() >> w.eye.y() >> w.eye.z() >> w.target.x() >> w.target.y() >> w.target.z()))
                fail("expected: camera t ex ey ez tx ty tz");
            spec.camera.push_back(w);
        } else if (key == "person") {
            PersonSpec p;
            if (!(ls >> p.id >> p.scale >> p.walk_period)) fail("expected: person id scale walk_period [floor_z]");
            ls >> p.floor_z;
            for (const auto& q : spec.people)
                if (q.id == p.id) fail("duplicate person " + std::to_string(p.id));
            spec.people.push_back(p);
        } else if (key == "waypoint") {
            int id;
            PathWaypoint w;
            if (!(ls >> id >> w.t >> w.position.x() >> w.position.y())) fail("expected: waypoint id t x y");
            find_person(id).path.push_back(w);
        } else if (key == "noise") {
            // read by parse_noise
        } else {
            fail("unknown keyword '" + key + "'");
        }
    }
    if (!have_intrinsics) {
        const double f = 0.9375 * spec.intrinsics.width;
        spec.intrinsics.fx = spec.intrinsics.fy = f;
        spec.intrinsics.cx = 0.5 * (spec.intrinsics.width - 1);
        spec.intrinsics.cy = 0.5 * (spec.intrinsics.height - 1);
    }
    spec.validate();
    return spec;
}

SceneSpec load_scene(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scene " + path.string());
    return parse_scene(in);
}

void NoiseModel::validate() const {
    for (double v : {depth_sigma_a, depth_sigma_b, depth_correlation_px, outlier_magnitude, skeleton_jitter,
                     altitude_sigma})
        if (!(v >= 0.0)) throw ConfigError("noise parameters must be >= 0");
    for (double v : {outlier_fraction, miss_probability})
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("noise fractions must lie in [0, 1]");
}

NoiseModel parse_noise(std::istream& in, NoiseModel n) {
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, name;
        double value;
        if (!(ls >> key) || key != "noise") continue;
        if (!(ls >> name >> value)) throw ConfigError("expected: noise NAME VALUE");
        if (name == "depth_sigma_a") n.depth_sigma_a = value;
        else if (name == "depth_sigma_b") n.depth_sigma_b = value;
        else if (name == "depth_correlation_px") n.depth_correlation_px = value;
        else if (name == "outlier_fraction") n.outlier_fraction = value;
        else if (name == "outlier_magnitude") n.outlier_magnitude = value;
        else if (name == "skeleton_jitter") n.skeleton_jitter = value;
        else if (name == "miss_probability") n.miss_probability = value;
        else if (name == "altitude_sigma") n.altitude_sigma = value;
        else throw ConfigError("unknown noise parameter '" + name + "'");
    }
    n.validate();
    return n;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    // splitmix64 over the three words
    auto mix = [](std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    };
    return mix(mix(mix(seed) ^ a) ^ b);
}

// ---- animation -------------------------------------------------------------------------------------

Pose camera_pose_at(const SceneSpec& spec, double t) {
    if (spec.camera.empty()) throw ContractViolation("scene has no camera path");
    const auto& cam = spec.camera;
    if (t <= cam.front().t) return look_at(cam.front().eye, cam.front().target);
    if (t >= cam.back().t) return look_at(cam.back().eye, cam.back().target);
    std::size_t i = 1;
    while (cam[i].t < t) ++i;
    const double s = (t - cam[i - 1].t) / (cam[i].t - cam[i - 1].t);
    const Vec3 eye = (1.0 - s) * cam[i - 1].eye + s * cam[i].eye;
    const Vec3 target = (1.0 - s) * cam[i - 1].target + s * cam[i].target;
    return look_at(eye, target);
}

namespace {

Mat3 rot_x(double a) { return axis_angle(Vec3::UnitX(), a); }
Mat3 rot_z(double a) { return axis_angle(Vec3::UnitZ(), a); }

struct PathSample {
    Vec2 position;
    Vec2 heading;
    bool moving;
};

PathSample sample_path(const std::vector<PathWaypoint>& path, double t) {
    auto heading_of = [&](std::size_t seg) -> std::optional<Vec2> {
        const Vec2 d = path[seg + 1].position - path[seg].position;
        if (d.norm() < 1e-9) return std::nullopt;
        return d.normalized();
    };
    // heading of the nearest segment that actually moves
    auto fallback_heading = [&](std::size_t seg) {
        for (std::size_t k = 0; k + 1 < path.size(); ++k) {
            const std::size_t lo = seg >= k ? seg - k : 0, hi = std::min(seg + k, path.size() - 2);
            if (auto h = heading_of(lo)) return *h;
            if (auto h = heading_of(hi)) return *h;
        }
        return Vec2(1.0, 0.0);
    };
    if (path.size() == 1) return {path[0].position, Vec2(1.0, 0.0), false};
    if (t <= path.front().t) return {path.front().position, fallback_heading(0), false};
    if (t >= path.back().t) return {path.back().position, fallback_heading(path.size() - 2), false};
    std::size_t i = 1;
    while (path[i].t < t) ++i;
    const double s = (t - path[i - 1].t) / (path[i].t - path[i - 1].t);
    const Vec2 p = (1.0 - s) * path[i - 1].position + s * path[i].position;
    const auto h = heading_of(i - 1);
    return {p, h ? *h : fallback_heading(i - 1), h.has_value()};
}

} // namespace

std::vector<PersonState> people_at(const SceneSpec& spec, double t) {
    std::vector<PersonState> out;
    out.reserve(spec.people.size());
    for (const PersonSpec& ps : spec.people) {
        PersonState st;
        st.id = ps.id;
        st.body = BodyModel::neutral(ps.scale);
        const PathSample ps_t = sample_path(ps.path, t);
        const double phase = ps_t.moving ? 2.0 * M_PI * t / ps.walk_period : 0.0;
        const double sw = std::sin(phase);

        PoseParams p = PoseParams::identity();
        p.local[idx(Joint::RHip)] = rot_x(-0.35 * sw);
        p.local[idx(Joint::LHip)] = rot_x(0.35 * sw);
        p.local[idx(Joint::RKnee)] = rot_x(0.15 + 0.35 * std::max(0.0, sw));
        p.local[idx(Joint::LKnee)] = rot_x(0.15 + 0.35 * std::max(0.0, -sw));
        p.local[idx(Joint::RShoulder)] = rot_z(-0.15) * rot_x(0.3 * sw);
        p.local[idx(Joint::LShoulder)] = rot_z(0.15) * rot_x(-0.3 * sw);
        p.local[idx(Joint::RElbow)] = rot_x(-0.3);
        p.local[idx(Joint::LElbow)] = rot_x(-0.3);

        const Vec3 forward(ps_t.heading.x(), ps_t.heading.y(), 0.0);
        const Vec3 up = Vec3::UnitZ();
        Mat3 r;
        r.col(0) = up.cross(forward);
        r.col(1) = up;
        r.col(2) = forward;
        const double hip_height = 0.92 * ps.scale;
        p.root = Pose(r, Vec3(ps_t.position.x(), ps_t.position.y(), ps.floor_z + hip_height));
        st.params = p;
        st.skeleton = skeleton_from_keypoints(forward_kinematics(st.body, p), ps.id);
        out.push_back(std::move(st));
    }
    return out;
}

// ---- ray casting -----------------------------------------------------------------------------------

namespace {

struct Hit {
    double t = kInf; // along a unit direction
    Vec3 normal = Vec3::Zero();
    Rgb8 colour{};
    std::int16_t label = kLabelNone;
};

/// Entry distance of a unit ray into a sphere, if the origin is outside.
double ray_sphere(const Vec3& o, const Vec3& d, const Vec3& c, double r) {
    const Vec3 oc = o - c;
    const double b = oc.dot(d);
    const double cc = oc.squaredNorm() - r * r;
    const double h = b * b - cc;
    if (h < 0.0) return kInf;
    const double t = -b - std::sqrt(h);
    return t > 0.0 ? t : kInf;
}

double ray_capsule(const Vec3& o, const Vec3& d, const Capsule& cap, Vec3& normal) {
    double best = kInf;
    for (const Vec3* c : {&cap.a, &cap.b}) {
        const double t = ray_sphere(o, d, *c, cap.radius);
        if (t < best) {
            best = t;
            normal = (o + t * d - *c) / cap.radius;
        }
    }
    const Vec3 ba = cap.b - cap.a;
    const double l2 = ba.squaredNorm();
    if (l2 > 0.0) {
        const Vec3 oa = o - cap.a;
        const Vec3 dp = d - ba * (d.dot(ba) / l2);
        const Vec3 op = oa - ba * (oa.dot(ba) / l2);
        const double qa = dp.squaredNorm();
        if (qa > 1e-18) {
            const double qb = 2.0 * dp.dot(op);
            const double qc = op.squaredNorm() - cap.radius * cap.radius;
            const double disc = qb * qb - 4.0 * qa * qc;
            if (disc >= 0.0) {
                const double t = (-qb - std::sqrt(disc)) / (2.0 * qa);
                const double s = (oa + t * d).dot(ba) / l2;
                if (t > 0.0 && s >= 0.0 && s <= 1.0 && t < best) {
                    best = t;
                    const Vec3 p = o + t * d;
                    normal = (p - (cap.a + s * ba)) / cap.radius;
                }
            }
        }
    }
    return best;
}

/// Slab test; hollow boxes return the exit distance when the origin is inside.
double ray_box(const Vec3& o, const Vec3& d, const BoxPrimitive& b, Vec3& normal) {
    double t_near = -kInf, t_far = kInf;
    int ax_near = 0, ax_far = 0;
    for (int i = 0; i < 3; ++i) {
        if (d[i] == 0.0) {
            if (o[i] <= b.min[i] || o[i] >= b.max[i]) return kInf;
            continue;
        }
        double t0 = (b.min[i] - o[i]) / d[i];
        double t1 = (b.max[i] - o[i]) / d[i];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > t_near) {
            t_near = t0;
            ax_near = i;
        }
        if (t1 < t_far) {
            t_far = t1;
            ax_far = i;
        }
    }
    if (t_near > t_far) return kInf;
    if (t_near > 0.0) {
        normal = Vec3::Zero();
        normal[ax_near] = d[ax_near] > 0.0 ? -1.0 : 1.0;
        return t_near;
    }
    if (b.hollow && t_far > 0.0) {
        normal = Vec3::Zero();
        normal[ax_far] = d[ax_far] > 0.0 ? -1.0 : 1.0;
        return t_far;
    }
    return kInf;
}

double ray_plane(const Vec3& o, const Vec3& d, const PlanePrimitive& p) {
    const double den = p.normal.dot(d);
    if (den == 0.0) return kInf;
    const double t = (p.offset - p.normal.dot(o)) / den;
    return t > 0.0 ? t : kInf;
}

struct PersonGeometry {
    std::vector<Capsule> capsules;
    Vec3 centre;
    double radius;
};

Rgb8 shade(Rgb8 c, const Vec3& n, const Vec3& d) {
    const double k = 0.35 + 0.65 * std::abs(n.dot(d));
    return {static_cast<std::uint8_t>(c.r * k), static_cast<std::uint8_t>(c.g * k), static_cast<std::uint8_t>(c.b * k)};
}

} // namespace

RenderedFrame render_at(const SceneSpec& spec, double t, std::uint64_t frame_id) {
    if (!(t >= 0.0 && t <= spec.duration)) throw ContractViolation("render: time outside the scene duration");
    const Intrinsics& K = spec.intrinsics;
    RenderedFrame f;
    f.frame_id = frame_id;
    f.timestamp = t;
    f.intrinsics = K;
    f.pose = camera_pose_at(spec, t);
    f.people = people_at(spec, t);
    f.rgb = RgbImage(K.width, K.height);
    f.depth = DepthImage(K.width, K.height, kInvalidDepth);
    f.mask = PeopleMask(K.width, K.height, 0);
    f.labels = Image<std::int16_t>(K.width, K.height, kLabelNone);
    f.person_pixels.assign(f.people.size(), 0);

    std::vector<PersonGeometry> people;
    for (const PersonState& ps : f.people) {
        PersonGeometry g;
        g.capsules = body_capsules(ps.body, ps.skeleton.keypoints);
        Vec3 lo = Vec3::Constant(kInf), hi = -lo;
        for (const auto& c : g.capsules) {
            lo = lo.cwiseMin(c.a).cwiseMin(c.b);
            hi = hi.cwiseMax(c.a).cwiseMax(c.b);
        }
        g.centre = 0.5 * (lo + hi);
        g.radius = 0.0;
        for (const auto& c : g.capsules)
            g.radius = std::max({g.radius, (c.a - g.centre).norm() + c.radius, (c.b - g.centre).norm() + c.radius});
        people.push_back(std::move(g));
    }
    static const Rgb8 person_colours[] = {{210, 90, 60}, {60, 170, 90}, {90, 90, 210}, {200, 180, 40}};

    const Mat3& R = f.pose.rotation();
    const Vec3& o = f.pose.translation();
    for (int y = 0; y < K.height; ++y) {
        for (int x = 0; x < K.width; ++x) {
            // unit-z camera ray, so the hit parameter along it is the z-depth
            const Vec3 dz = R * Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
            const double len = dz.norm();
            const Vec3 d = dz / len;
            Hit best;
            Vec3 n;
            for (const auto& b : spec.boxes) {
                const double th = ray_box(o, d, b, n);
                if (th < best.t) best = {th, n, b.colour, kLabelStatic};
            }
            for (const auto& p : spec.planes) {
                const double th = ray_plane(o, d, p);
                if (th < best.t) best = {th, p.normal, p.colour, kLabelStatic};
            }
            for (std::size_t i = 0; i < people.size(); ++i) {
                if (ray_sphere(o, d, people[i].centre, people[i].radius) == kInf &&
                    (o - people[i].centre).norm() > people[i].radius)
                    continue;
                for (const auto& c : people[i].capsules) {
                    const double th = ray_capsule(o, d, c, n);
                    if (th < best.t) best = {th, n, person_colours[i % 4], static_cast<std::int16_t>(i)};
                }
            }
            if (best.label == kLabelNone) continue;
            f.depth(x, y) = best.t / len;
            f.labels(x, y) = best.label;
            f.rgb(x, y) = shade(best.colour, best.normal, d);
            if (best.label >= 0) {
                f.mask(x, y) = 1;
                ++f.person_pixels[best.label];
            }
        }
    }
    return f;
}

RenderedFrame render_frame(const SceneSpec& spec, std::uint64_t frame_id) {
    return render_at(spec, spec.frame_time(frame_id), frame_id);
}

// ---- oracles ---------------------------------------------------------------------------------------

namespace {

/// Unit-variance Gaussian field: white noise blurred by a Gaussian kernel of std-dev `sigma_px`, generated
/// with a margin so that every pixel sees the full kernel.
std::vector<double> correlated_field(int w, int h, double sigma_px, std::mt19937_64& rng) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma_px));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma_px * sigma_px));
    double sq = 0.0;
    for (double& v : k) sq += (v /= sum) * v;
    const int pw = w + 2 * r, ph = h + 2 * r;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> white(static_cast<std::size_t>(pw) * ph);
    for (double& v : white) v = normal(rng);
    std::vector<double> rows(static_cast<std::size_t>(w) * ph, 0.0);
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = 0; i <= 2 * r; ++i) acc += k[i] * white[static_cast<std::size_t>(y) * pw + x + i];
            rows[static_cast<std::size_t>(y) * w + x] = acc;
        }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = 0; i <= 2 * r; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * w + x];
            out[static_cast<std::size_t>(y) * w + x] = acc / sq; // variance of the blur is sq^2
        }
    return out;
}

} // namespace

DepthImage oracle_depth(const DepthImage& gt, const NoiseModel& noise, std::uint64_t seed) {
    DepthImage out = gt;
    const bool gaussian = noise.depth_sigma_a > 0.0 || noise.depth_sigma_b > 0.0;
    const bool outliers = noise.outlier_fraction > 0.0;
    if (!gaussian && !outliers) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const bool smooth = gaussian && noise.depth_correlation_px > 0.0;
    const std::vector<double> field =
        smooth ? correlated_field(gt.width(), gt.height(), noise.depth_correlation_px, rng) : std::vector<double>{};
    for (std::size_t i = 0; i < out.size(); ++i) {
        double d = out[i];
        if (!is_valid_depth(d)) continue;
        if (gaussian) d += (noise.depth_sigma_a + noise.depth_sigma_b * d * d) * (smooth ? field[i] : normal(rng));
        if (outliers && uniform(rng) < noise.outlier_fraction)
            d += uniform(rng) < 0.5 ? noise.outlier_magnitude : -noise.outlier_magnitude;
        out[i] = d > 0.0 ? d : kInvalidDepth;
    }
    return out;
}

std::vector<Skeleton> oracle_skeletons(const std::vector<Skeleton>& visible_gt, const NoiseModel& noise,
                                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    std::vector<Skeleton> out;
    for (const Skeleton& gt : visible_gt) {
        if (noise.miss_probability > 0.0 && uniform(rng) < noise.miss_probability) continue;
        Skeleton s = gt;
        if (noise.skeleton_jitter > 0.0)
            for (auto& k : s.keypoints)
                for (int c = 0; c < 3; ++c) k[c] += noise.skeleton_jitter * normal(rng);
        out.push_back(s);
    }
    return out;
}

std::vector<Skeleton> visible_skeletons(const RenderedFrame& frame, int min_pixels) {
    std::vector<Skeleton> out;
    for (std::size_t i = 0; i < frame.people.size(); ++i)
        if (frame.person_pixels[i] >= min_pixels) out.push_back(frame.people[i].skeleton);
    return out;
}

// ---- ground truth cloud ----------------------------------------------------------------------------

void StaticCloudBuilder::add(const RenderedFrame& frame) {
    const Intrinsics& K = frame.intrinsics;
    for (int y = 0; y < K.height; ++y) {
        for (int x = 0; x < K.width; ++x) {
            const double d = frame.depth(x, y);
            if (!is_valid_depth(d) || d > max_depth_ || frame.mask(x, y)) continue;
            const Vec3 p = frame.pose * Vec3(d * (x - K.cx) / K.fx, d * (y - K.cy) / K.fy, d);
            const std::array<std::int64_t, 3> key{static_cast<std::int64_t>(std::floor(p.x() / cell_)),
                                                  static_cast<std::int64_t>(std::floor(p.y() / cell_)),
                                                  static_cast<std::int64_t>(std::floor(p.z() / cell_))};
            cells_.emplace(key, p);
        }
    }
}

SurfaceCloud StaticCloudBuilder::cloud() const {
    SurfaceCloud c;
    c.vertices.reserve(cells_.size());
    for (const auto& [k, p] : cells_) c.vertices.push_back(p);
    return c;
}

SurfaceCloud observed_static_cloud(const std::vector<RenderedFrame>& frames, double cell, double max_depth) {
    StaticCloudBuilder b(cell, max_depth);
    for (const auto& f : frames) b.add(f);
    return b.cloud();
}

// ---- dataset ---------------------------------------------------------------------------------------

void write_dataset(const fs::path& dir, const SceneSpec& spec, const NoiseModel& noise, std::uint64_t seed,
                   const DatasetOptions& opts) {
    noise.validate();
    if (!(opts.tracker_scale > 0.0)) throw ConfigError("tracker scale must be positive");
    for (const char* sub : {"rgb", "depth", "masks"}) fs::create_directories(dir / sub);

    Trajectory traj, tracker;
    std::map<std::uint64_t, double> altitudes;
    SkeletonSequence skeletons;
    VisibilityTable visibility;
    StaticCloudBuilder cloud(opts.gt_cloud_cell, opts.gt_cloud_max_depth);
    std::mt19937_64 alt_rng(derive_seed(seed, 0xa17));
    std::normal_distribution<double> normal(0.0, 1.0);

    for (std::uint64_t id = 0; id < spec.frame_count(); ++id) {
        const RenderedFrame f = render_frame(spec, id);
        const std::string name = SequenceDataset::frame_name(id);
        write_rgb_png(dir / "rgb" / name, f.rgb);
        write_depth_png(dir / "depth" / name, f.depth);
        write_mask_png(dir / "masks" / name, f.mask);
        traj.push_back({id, f.pose});
        tracker.push_back({id, Pose(f.pose.rotation(), f.pose.translation() / opts.tracker_scale)});
        double alt = f.pose.translation().z();
        if (noise.altitude_sigma > 0.0) alt += noise.altitude_sigma * normal(alt_rng);
        altitudes[id] = alt;
        auto& frame_skeletons = skeletons[id];
        for (std::size_t i = 0; i < f.people.size(); ++i) {
            frame_skeletons.push_back(f.people[i].skeleton);
            visibility[{id, f.people[i].id}] = f.person_pixels[i] >= opts.visibility_min_pixels;
        }
        cloud.add(f);
    }
    write_trajectory(dir / "trajectory.txt", traj);
    write_trajectory(dir / "tracker.txt", tracker);
    write_altitudes(dir / "altitude.txt", altitudes);
    write_skeletons(dir / "skeletons.txt", skeletons);
    write_visibility(dir / "visibility.txt", visibility);
    write_meta(dir / "meta.txt", {spec.intrinsics, spec.fps, opts.tracker_scale});
    write_ply(dir / "gt_cloud.ply", cloud.cloud());
}

} // namespace hmap
