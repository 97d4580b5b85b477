#include "duet/motion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace duet::motion {

namespace fs = std::filesystem;
using detail::require;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kTextSalt = 0x64757465787400ULL;

Vec3 yaw_rotate(const Vec3& p, double yaw) {
  double c = std::cos(yaw), s = std::sin(yaw);
  return {p.x * c - p.z * s, p.y, p.x * s + p.z * c};
}

// Rotation that maps the horizontal direction (dx, dz) onto +x.
Vec3 align_to_x(const Vec3& p, double dx, double dz) {
  double theta = std::atan2(dz, dx);
  double c = std::cos(theta), s = std::sin(theta);
  return {p.x * c + p.z * s, p.y, -p.x * s + p.z * c};
}

}  // namespace

// ---- canonicalization -------------------------------------------------------

DyadicSample canonicalize(const DyadicSample& sample) {
  const MotionSequence& a = sample.a;
  require(a.length() >= 2, "canonicalize: needs at least 2 frames");
  require(sample.b.length() == a.length() && sample.b.fps == a.fps,
          "canonicalize: persons must share length and fps");

  Vec3 origin = a.joint(0, kJointRoot);

  // Facing from the root's horizontal travel over the first half second.
  int lookahead = std::min(a.length() - 1, std::max(1, (a.fps + 1) / 2));
  Vec3 travel = a.joint(lookahead, kJointRoot) - origin;
  double dx = travel.x, dz = travel.z;
  if (std::hypot(dx, dz) < 1e-6) {
    // Fallback: direction to the hands midpoint at the first frame.
    Vec3 mid = (a.joint(0, kJointHandL) + a.joint(0, kJointHandR)) * 0.5;
    Vec3 toward = mid - origin;
    dx = toward.x;
    dz = toward.z;
    if (std::hypot(dx, dz) < 1e-6) {
      // Degenerate pose: identity rotation.
      dx = 1.0;
      dz = 0.0;
    }
  }

  DyadicSample out = sample;
  auto apply = [&](MotionSequence& m) {
    for (Vec3& p : m.joints) {
      Vec3 shifted{p.x - origin.x, p.y, p.z - origin.z};
      p = align_to_x(shifted, dx, dz);
    }
  };
  apply(out.a);
  apply(out.b);
  return out;
}

double max_bone_length_deviation(const MotionSequence& m) {
  double worst = 0.0;
  for (int f = 0; f < m.length(); ++f) {
    const Vec3& root = m.joint(f, kJointRoot);
    for (int j : {kJointHandL, kJointHandR}) {
      worst = std::max(worst,
                       std::abs((m.joint(f, j) - root).norm() - kHandBone));
    }
    for (int j : {kJointFootL, kJointFootR}) {
      worst = std::max(worst,
                       std::abs((m.joint(f, j) - root).norm() - kFootBone));
    }
  }
  return worst;
}

// ---- synthetic dataset ------------------------------------------------------

namespace {

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

// Local limb direction components; x forward, y up, z lateral.
struct LimbDir {
  double fwd = 0.0, vert = -1.0, lat = 0.0;
};

Vec3 limb_joint(const Vec3& root, double yaw, const LimbDir& d, double bone) {
  Vec3 local{d.fwd, d.vert, d.lat};
  double n = local.norm();
  Vec3 unit{local.x / n, local.y / n, local.z / n};
  return root + yaw_rotate(unit, yaw) * bone;
}

struct PersonFrame {
  Vec3 root;  // full 3d root position
  double yaw = 0.0;
  LimbDir hand_l, hand_r, foot_l, foot_r;
};

void emit_frame(MotionSequence& m, const PersonFrame& f) {
  m.joints.push_back(f.root);
  m.joints.push_back(limb_joint(f.root, f.yaw, f.hand_l, kHandBone));
  m.joints.push_back(limb_joint(f.root, f.yaw, f.hand_r, kHandBone));
  m.joints.push_back(limb_joint(f.root, f.yaw, f.foot_l, kFootBone));
  m.joints.push_back(limb_joint(f.root, f.yaw, f.foot_r, kFootBone));
}

LimbDir rest_hand(bool left, double sway) {
  return {0.18 + sway, -0.62, left ? 0.42 : -0.42};
}

LimbDir gait_foot(bool left, double phase, double amp) {
  return {amp * std::sin(phase), -1.0, left ? 0.18 : -0.18};
}

struct TemplateContext {
  int length;
  int fps;
  Rng* rng;
};

void build_approach_handshake(const TemplateContext& ctx, MotionSequence& a,
                              MotionSequence& b) {
  Rng& rng = *ctx.rng;
  double dur = static_cast<double>(ctx.length) / ctx.fps;
  double d0 = rng.uniform(1.6, 2.4);
  double g = rng.uniform(0.75, 0.95);
  double tau = rng.uniform(0.35, 0.5) * dur;
  double shake_f = rng.uniform(1.5, 2.5);
  double shake_amp = rng.uniform(0.04, 0.08);
  double step_f = rng.uniform(1.4, 1.9);
  double bob_pa = rng.uniform(0.0, 2.0 * kPi);
  double bob_pb = rng.uniform(0.0, 2.0 * kPi);

  for (int i = 0; i < ctx.length; ++i) {
    double t = static_cast<double>(i) / ctx.fps;
    double ease = smoothstep(t / tau);
    double gap = d0 + (g - d0) * ease;
    double walking = 1.0 - ease;
    double shake = shake_amp * std::sin(2.0 * kPi * shake_f * t);

    auto person = [&](bool is_a, double bob_phase) {
      PersonFrame f;
      double side = is_a ? -1.0 : 1.0;
      // Gait and bob never die out: the pair keeps shifting weight while
      // shaking, so held frames stay dynamic at any horizon.
      f.root = {side * gap / 2.0,
                0.88 + 0.02 * std::sin(2.0 * kPi * step_f * t + bob_phase),
                0.03 * ease * std::sin(2.0 * kPi * 0.5 * step_f * t + bob_phase)};
      f.yaw = is_a ? 0.0 : kPi;
      // Right hands reach forward and keep pumping; left hands sway along.
      f.hand_r = {0.2 + 0.6 * ease, -0.5 + 0.45 * ease + shake, -0.18};
      f.hand_l = rest_hand(true, 0.12 * std::sin(2.0 * kPi * step_f * t));
      double ph = 2.0 * kPi * step_f * t + (is_a ? 0.0 : 0.6);
      f.foot_l = gait_foot(true, ph, 0.12 * walking + 0.1);
      f.foot_r = gait_foot(false, ph + kPi, 0.12 * walking + 0.1);
      return f;
    };
    emit_frame(a, person(true, bob_pa));
    emit_frame(b, person(false, bob_pb));
  }
}

void build_mirror_sway(const TemplateContext& ctx, MotionSequence& a,
                       MotionSequence& b) {
  Rng& rng = *ctx.rng;
  double dist = rng.uniform(1.1, 1.5);
  double f0 = rng.uniform(0.4, 0.8);
  double amp = rng.uniform(0.12, 0.25);
  double arm = rng.uniform(0.35, 0.6);

  for (int i = 0; i < ctx.length; ++i) {
    double t = static_cast<double>(i) / ctx.fps;
    double sway = amp * std::sin(2.0 * kPi * f0 * t);
    double wave = arm * std::sin(2.0 * kPi * f0 * t);

    auto make = [&](bool is_a) {
      PersonFrame f;
      double side = is_a ? -1.0 : 1.0;
      // Both drift to the same world z: opposite sides of their own bodies.
      f.root = {side * dist / 2.0, 0.9 + 0.015 * std::sin(2.0 * kPi * f0 * t),
                sway};
      f.yaw = is_a ? 0.0 : kPi;
      f.hand_l = {0.25, -0.1 + wave, 0.5};
      f.hand_r = {0.25, -0.1 - wave, -0.5};
      f.foot_l = gait_foot(true, 2.0 * kPi * f0 * t, 0.05);
      f.foot_r = gait_foot(false, 2.0 * kPi * f0 * t + kPi, 0.05);
      return f;
    };
    emit_frame(a, make(true));
    emit_frame(b, make(false));
  }
}

void build_circle_walk(const TemplateContext& ctx, MotionSequence& a,
                       MotionSequence& b) {
  Rng& rng = *ctx.rng;
  double r = rng.uniform(0.8, 1.3);
  double period = rng.uniform(6.0, 12.0);
  double phi0 = rng.uniform(0.0, 2.0 * kPi);
  double step_f = rng.uniform(1.5, 2.0);

  for (int i = 0; i < ctx.length; ++i) {
    double t = static_cast<double>(i) / ctx.fps;
    double theta = phi0 + 2.0 * kPi * t / period;

    auto make = [&](double th, double gait_phase) {
      PersonFrame f;
      f.root = {r * std::cos(th),
                0.89 + 0.02 * std::sin(2.0 * kPi * step_f * t + gait_phase),
                r * std::sin(th)};
      f.yaw = th + kPi / 2.0;  // tangent of the counterclockwise orbit
      double ph = 2.0 * kPi * step_f * t + gait_phase;
      f.hand_l = rest_hand(true, 0.12 * std::sin(ph));
      f.hand_r = rest_hand(false, 0.12 * std::sin(ph + kPi));
      f.foot_l = gait_foot(true, ph, 0.2);
      f.foot_r = gait_foot(false, ph + kPi, 0.2);
      return f;
    };
    emit_frame(a, make(theta, 0.0));
    emit_frame(b, make(theta + kPi, 0.9));
  }
}

void build_push_retreat(const TemplateContext& ctx, MotionSequence& a,
                        MotionSequence& b) {
  Rng& rng = *ctx.rng;
  double g0 = rng.uniform(0.95, 1.25);
  double ga = rng.uniform(0.25, 0.45);
  double f0 = rng.uniform(0.25, 0.45);
  double step_f = rng.uniform(1.3, 1.8);

  for (int i = 0; i < ctx.length; ++i) {
    double t = static_cast<double>(i) / ctx.fps;
    double phase = 2.0 * kPi * f0 * t;
    double gap = g0 + ga * std::sin(phase);
    // closing > 0 while the gap shrinks; drives the push gesture
    double closing = std::max(0.0, -std::cos(phase));

    auto make = [&](bool is_a) {
      PersonFrame f;
      double side = is_a ? -1.0 : 1.0;
      f.root = {side * gap / 2.0,
                0.88 + 0.015 * std::sin(2.0 * kPi * step_f * t), 0.0};
      f.yaw = is_a ? 0.0 : kPi;
      f.hand_l = {0.3 + 0.45 * closing, -0.25, 0.3};
      f.hand_r = {0.3 + 0.45 * closing, -0.25, -0.3};
      double ph = 2.0 * kPi * step_f * t + (is_a ? 0.0 : kPi);
      f.foot_l = gait_foot(true, ph, 0.16);
      f.foot_r = gait_foot(false, ph + kPi, 0.16);
      return f;
    };
    emit_frame(a, make(true));
    emit_frame(b, make(false));
  }
}

struct TemplateDef {
  const char* name;
  void (*build)(const TemplateContext&, MotionSequence&, MotionSequence&);
  std::vector<const char*> texts;
};

const std::vector<TemplateDef>& template_defs() {
  static const std::vector<TemplateDef> defs = {
      {"approach_handshake", build_approach_handshake,
       {"two people walk toward each other and shake hands",
        "a pair approaches and clasps right hands in greeting",
        "both persons meet in the middle for a handshake",
        "one person greets the other with a firm handshake"}},
      {"mirror_sway", build_mirror_sway,
       {"two people face each other and sway side to side in sync",
        "the pair mirrors a gentle swaying dance",
        "facing one another, both persons rock together waving their arms",
        "a mirrored swaying duet with raised hands"}},
      {"circle_walk", build_circle_walk,
       {"two people walk in a circle staying opposite each other",
        "the pair orbits a shared center at a steady pace",
        "both persons circle around one another continuously",
        "two people stroll along a ring keeping maximum distance"}},
      {"push_retreat", build_push_retreat,
       {"one person pushes forward while the other backs away, over and over",
        "the pair alternates advancing and retreating with hands raised",
        "a rhythmic push and withdraw exchange between two persons",
        "two people spar, closing in and backing off in turns"}},
  };
  return defs;
}

const TemplateDef& find_template(const std::string& name) {
  for (const TemplateDef& d : template_defs()) {
    if (name == d.name) return d;
  }
  throw std::invalid_argument("unknown motion template: " + name);
}

}  // namespace

std::vector<std::string> default_templates() {
  std::vector<std::string> names;
  for (const TemplateDef& d : template_defs()) names.emplace_back(d.name);
  return names;
}

std::vector<DyadicSample> generate_dataset(
    const std::vector<std::string>& templates, int n_samples, int length,
    int fps, std::uint64_t seed) {
  require(!templates.empty(), "generate_dataset: templates must be non-empty");
  require(n_samples >= 0, "generate_dataset: n_samples must be >= 0");
  require(length >= 2 && fps >= 1, "generate_dataset: bad length or fps");

  std::vector<DyadicSample> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Rng rng = Rng::substream(seed, "data", static_cast<std::uint64_t>(i));
    const TemplateDef& def = find_template(templates[i % templates.size()]);

    DyadicSample s;
    s.template_name = def.name;
    {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "s%05d", i);
      s.id = std::string(buf) + "_" + def.name;
    }
    s.a.fps = fps;
    s.b.fps = fps;
    TemplateContext ctx{length, fps, &rng};
    def.build(ctx, s.a, s.b);

    // Random world pose, undone by canonicalization below; exercises the
    // preprocessing the trainer depends on.
    double world_yaw = rng.uniform(0.0, 2.0 * kPi);
    Vec3 shift{rng.uniform(-3.0, 3.0), 0.0, rng.uniform(-3.0, 3.0)};
    for (MotionSequence* m : {&s.a, &s.b}) {
      for (Vec3& p : m->joints) p = yaw_rotate(p, world_yaw) + shift;
    }

    // Three paraphrases per sample, drawn without replacement.
    std::vector<int> order = rng.permutation(static_cast<int>(def.texts.size()));
    for (int k = 0; k < 3 && k < static_cast<int>(order.size()); ++k)
      s.texts.emplace_back(def.texts[order[k]]);

    out.push_back(canonicalize(s));
  }
  return out;
}

// ---- text embedding -----------------------------------------------------------

Tensor embed_text(const std::string& prompt, int d_text) {
  require(d_text >= 1, "embed_text: d_text must be >= 1");
  std::vector<std::string> tokens;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) tokens.push_back(token);
    token.clear();
  };
  for (char ch : prompt) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  if (tokens.empty()) return Tensor::zeros({d_text});

  // Pool in sorted order so the bag is order-invariant bit for bit.
  std::sort(tokens.begin(), tokens.end());
  std::vector<double> acc(d_text, 0.0);
  for (const std::string& tok : tokens) {
    Rng trng(Rng::mix(Rng::hash_name(tok) ^ kTextSalt));
    for (int i = 0; i < d_text; ++i) acc[i] += trng.gaussian();
  }
  double norm = 0.0;
  for (double& v : acc) v /= tokens.size();
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& v : acc) v /= norm;
  }
  return Tensor::from_data({d_text}, std::move(acc));
}

bool is_null_embedding(const Tensor& embedding) {
  for (double v : embedding.data()) {
    if (v != 0.0) return false;
  }
  return true;
}

// ---- pose tensor bridge ---------------------------------------------------------

Tensor to_pose_tensor(const MotionSequence& m) {
  int L = m.length();
  require(L >= 1, "to_pose_tensor: empty sequence");
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(L) * kPoseDim);
  for (const Vec3& p : m.joints) {
    data.push_back(p.x);
    data.push_back(p.y);
    data.push_back(p.z);
  }
  return Tensor::from_data({L, kPoseDim}, std::move(data));
}

MotionSequence from_pose_tensor(const Tensor& x, int fps) {
  require(x.rank() == 2 && x.cols() == kPoseDim,
          "from_pose_tensor: expected [L x 15]");
  MotionSequence m;
  m.fps = fps;
  m.joints.resize(static_cast<std::size_t>(x.rows()) * kNumJoints);
  for (int f = 0; f < x.rows(); ++f) {
    for (int j = 0; j < kNumJoints; ++j) {
      m.joints[f * kNumJoints + j] = {x.at(f, 3 * j), x.at(f, 3 * j + 1),
                                      x.at(f, 3 * j + 2)};
    }
  }
  return m;
}

// ---- .dym file format ------------------------------------------------------------

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& buf, double v) {
  float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof(bits));
  put_u32(buf, bits);
}

std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw io_error("motion file: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i]))
         << (8 * i);
  pos += 4;
  return v;
}

double get_f32(const std::string& buf, std::size_t& pos) {
  std::uint32_t bits = get_u32(buf, pos);
  float f;
  std::memcpy(&f, &bits, sizeof(f));
  return static_cast<double>(f);
}

std::string encode_motion(const DyadicSample& s) {
  int L = s.a.length();
  std::string buf;
  buf.reserve(24 + static_cast<std::size_t>(2) * L * kNumJoints * 3 * 4);
  buf += "DYMO";
  put_u32(buf, 1);  // version
  put_u32(buf, static_cast<std::uint32_t>(s.a.fps));
  put_u32(buf, static_cast<std::uint32_t>(L));
  put_u32(buf, kNumJoints);
  put_u32(buf, 2);  // persons
  for (const MotionSequence* m : {&s.a, &s.b}) {
    for (const Vec3& p : m->joints) {
      put_f32(buf, p.x);
      put_f32(buf, p.y);
      put_f32(buf, p.z);
    }
  }
  return buf;
}

std::string sidecar_path(const std::string& path) { return path + ".json"; }

}  // namespace

void write_motion(const std::string& path, const DyadicSample& s) {
  require(s.a.length() >= 1 && s.a.length() == s.b.length(),
          "write_motion: persons must share a positive length");
  require(s.a.fps == s.b.fps, "write_motion: persons must share fps");

  std::string buf = encode_motion(s);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw io_error("write_motion: cannot open " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw io_error("write_motion: write failed for " + path);

  nlohmann::json meta;
  meta["id"] = s.id;
  meta["texts"] = s.texts;
  meta["template"] = s.template_name;
  std::ofstream mf(sidecar_path(path), std::ios::trunc);
  if (!mf) throw io_error("write_motion: cannot open " + sidecar_path(path));
  mf << meta.dump(2) << "\n";
}

DyadicSample read_motion(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("read_motion: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();

  if (buf.size() < 4 || buf.compare(0, 4, "DYMO") != 0)
    throw io_error("read_motion: bad magic in " + path);
  std::size_t pos = 4;
  std::uint32_t version = get_u32(buf, pos);
  if (version != 1)
    throw io_error("read_motion: unsupported version in " + path);
  std::uint32_t fps = get_u32(buf, pos);
  std::uint32_t L = get_u32(buf, pos);
  std::uint32_t J = get_u32(buf, pos);
  std::uint32_t P = get_u32(buf, pos);
  if (J != kNumJoints || P != 2)
    throw io_error("read_motion: unexpected joint or person count in " + path);
  std::size_t want = pos + static_cast<std::size_t>(P) * L * J * 3 * 4;
  if (buf.size() != want)
    throw io_error("read_motion: corrupt payload in " + path);

  DyadicSample s;
  for (MotionSequence* m : {&s.a, &s.b}) {
    m->fps = static_cast<int>(fps);
    m->joints.resize(static_cast<std::size_t>(L) * J);
    for (Vec3& p : m->joints) {
      p.x = get_f32(buf, pos);
      p.y = get_f32(buf, pos);
      p.z = get_f32(buf, pos);
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw io_error("read_motion: non-finite values in " + path);
    }
  }

  std::ifstream mf(sidecar_path(path));
  if (mf) {
    nlohmann::json meta = nlohmann::json::parse(mf, nullptr, false);
    if (!meta.is_discarded()) {
      s.id = meta.value("id", "");
      s.template_name = meta.value("template", "");
      if (meta.contains("texts")) {
        for (const auto& t : meta["texts"]) s.texts.push_back(t);
      }
    }
  }
  return s;
}

// ---- corpus on disk ---------------------------------------------------------------

namespace {

std::uint64_t fnv1a_update(std::uint64_t h, const std::string& bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct ManifestRow {
  std::string id, rel_path, template_name;
  int length = 0;
};

std::vector<ManifestRow> read_manifest(const std::string& dir) {
  std::string manifest_path = (fs::path(dir) / "corpus.manifest").string();
  std::ifstream f(manifest_path);
  if (!f) throw io_error("cannot open corpus manifest " + manifest_path);
  std::vector<ManifestRow> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    ManifestRow r;
    std::string len;
    if (!std::getline(ls, r.id, '\t') || !std::getline(ls, r.rel_path, '\t') ||
        !std::getline(ls, len, '\t') || !std::getline(ls, r.template_name)) {
      throw io_error("malformed manifest line: " + line);
    }
    r.length = std::atoi(len.c_str());
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

CorpusInfo write_corpus(const std::string& dir,
                        const std::vector<DyadicSample>& samples) {
  fs::create_directories(fs::path(dir) / "samples");
  std::string manifest;
  for (const DyadicSample& s : samples) {
    std::string rel = "samples/" + s.id + ".dym";
    write_motion((fs::path(dir) / rel).string(), s);
    manifest += s.id + "\t" + rel + "\t" + std::to_string(s.a.length()) +
                "\t" + s.template_name + "\n";
  }
  std::string manifest_path = (fs::path(dir) / "corpus.manifest").string();
  std::ofstream mf(manifest_path, std::ios::trunc | std::ios::binary);
  if (!mf) throw io_error("write_corpus: cannot open " + manifest_path);
  mf << manifest;
  mf.close();

  CorpusInfo info;
  info.manifest_path = manifest_path;
  info.count = static_cast<int>(samples.size());
  info.hash_hex = corpus_hash(dir);
  return info;
}

std::vector<DyadicSample> read_corpus(const std::string& dir) {
  std::vector<DyadicSample> samples;
  for (const ManifestRow& r : read_manifest(dir)) {
    samples.push_back(read_motion((fs::path(dir) / r.rel_path).string()));
    if (samples.back().a.length() != r.length)
      throw io_error("corpus sample length mismatch for " + r.id);
  }
  return samples;
}

std::string corpus_hash(const std::string& dir) {
  std::uint64_t h = 1469598103934665603ULL;
  std::string manifest_path = (fs::path(dir) / "corpus.manifest").string();
  h = fnv1a_update(h, read_file_bytes(manifest_path));
  for (const ManifestRow& r : read_manifest(dir)) {
    std::string p = (fs::path(dir) / r.rel_path).string();
    h = fnv1a_update(h, read_file_bytes(p));
    h = fnv1a_update(h, read_file_bytes(p + ".json"));
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace duet::motion
