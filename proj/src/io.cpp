#include "mhr/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace mhr {

namespace {

using nlohmann::json;

// Shortest round-trip decimal form; parsing it back recovers the exact bits.
std::string fmt(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& tok, const std::string& path) {
  double v = 0.0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    throw InputError("bad number '" + tok + "' in " + path);
  return v;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

void finish(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw InputError("short write on '" + path + "'");
}

json parse_json_file(const std::string& path) {
  std::ifstream in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError("JSON parse failure in " + path + ": " + e.what());
  }
}

json vec_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 json_to_vec2(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw InputError("expected [u,v] pair in " + path);
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

constexpr std::uint32_t kCanonicalNanF32 = 0x7FC00000u;

}  // namespace

std::vector<SE3> Trajectory::poses() const {
  std::vector<SE3> out;
  out.reserve(quats.size());
  for (std::size_t i = 0; i < quats.size(); ++i) out.emplace_back(quats[i], positions[i]);
  return out;
}

Trajectory Trajectory::from_poses(const std::vector<double>& times,
                                  const std::vector<SE3>& poses_c2w) {
  if (times.size() != poses_c2w.size())
    throw InputError("trajectory: time and pose counts differ");
  Trajectory t;
  t.times = times;
  for (const SE3& g : poses_c2w) {
    Quat q = g.unit_quaternion();
    double lead[4] = {q.w, q.x, q.y, q.z};
    for (double c : lead) {
      if (c < 0.0) q = -q;
      if (c != 0.0) break;
    }
    t.quats.push_back(q);
    t.positions.push_back(g.translation());
  }
  return t;
}

void save_trajectory_tum(const std::string& path, const Trajectory& traj) {
  if (traj.quats.size() != traj.times.size() || traj.positions.size() != traj.times.size())
    throw InputError("trajectory: field lengths differ");
  std::ofstream out = open_out(path);
  out << "# t tx ty tz qx qy qz qw\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Quat& q = traj.quats[i];
    const Vec3& p = traj.positions[i];
    if (!std::isfinite(q.norm()) || !p.allFinite() || !std::isfinite(traj.times[i]))
      throw InputError("trajectory: non-finite pose at row " + std::to_string(i));
    out << fmt(traj.times[i]) << ' ' << fmt(p.x()) << ' ' << fmt(p.y()) << ' ' << fmt(p.z())
        << ' ' << fmt(q.x) << ' ' << fmt(q.y) << ' ' << fmt(q.z) << ' ' << fmt(q.w) << '\n';
  }
  finish(out, path);
}

Trajectory load_trajectory_tum(const std::string& path) {
  std::ifstream in = open_in(path);
  Trajectory t;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string body = line.substr(0, line.find('#'));
    std::istringstream ss(body);
    std::vector<std::string> tok;
    std::string word;
    while (ss >> word) tok.push_back(word);
    if (tok.empty()) continue;
    if (tok.size() != 8)
      throw InputError(path + ":" + std::to_string(row) + ": expected 8 fields, got " +
                       std::to_string(tok.size()));
    double v[8];
    for (int k = 0; k < 8; ++k) v[k] = parse_double(tok[std::size_t(k)], path);
    t.times.push_back(v[0]);
    t.positions.emplace_back(v[1], v[2], v[3]);
    t.quats.push_back(Quat(v[7], v[4], v[5], v[6]));  // file order x y z w
  }
  return t;
}

void save_depth_raw(const std::string& path, const DepthMap& depth) {
  static_assert(std::endian::native == std::endian::little,
                "raw depth files are little-endian; big-endian hosts are unsupported");
  std::ofstream out = open_out(path);
  for (int r = 0; r < depth.height(); ++r)
    for (int c = 0; c < depth.width(); ++c) {
      double v = depth.at(r, c);
      std::uint32_t bits =
          std::isfinite(v) ? std::bit_cast<std::uint32_t>(float(v)) : kCanonicalNanF32;
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  finish(out, path);

  json side{{"width", depth.width()}, {"height", depth.height()}, {"units", "m"}};
  std::ofstream sout = open_out(path + ".json");
  sout << side.dump(2) << '\n';
  finish(sout, path + ".json");
}

DepthMap load_depth_raw(const std::string& path) {
  json side = parse_json_file(path + ".json");
  if (side.size() != 3 || !side.contains("width") || !side.contains("height") ||
      side.value("units", "") != std::string("m"))
    throw InputError("bad depth sidecar " + path + ".json");
  int w = side["width"].get<int>();
  int h = side["height"].get<int>();
  if (w <= 0 || h <= 0) throw InputError("bad depth shape in " + path + ".json");

  std::ifstream in = open_in(path);
  DepthMap depth(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), 4);
      if (!in) throw InputError("truncated depth data in " + path);
      float v = std::bit_cast<float>(bits);
      if (std::isfinite(v)) depth.set(r, c, double(v));
    }
  char extra;
  if (in.read(&extra, 1)) throw InputError("trailing bytes in " + path);
  return depth;
}

void save_mask_pgm(const std::string& path, const InstanceMask& mask) {
  std::ofstream out = open_out(path);
  out << "P5\n" << mask.width() << ' ' << mask.height() << "\n255\n";
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c) {
      char b = char(mask.at(r, c));
      out.write(&b, 1);
    }
  finish(out, path);
}

InstanceMask load_mask_pgm(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P5" || maxval != 255 || w <= 0 || h <= 0)
    throw InputError("bad PGM header in " + path);
  in.get();  // single whitespace after maxval
  InstanceMask::Grid grid(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int b = in.get();
      if (b < 0) throw InputError("truncated PGM data in " + path);
      grid(r, c) = std::uint8_t(b);
    }
  return InstanceMask(std::move(grid));
}

namespace {

json quat_to_json(const Quat& q) { return json::array({q.w, q.x, q.y, q.z}); }

Quat json_to_quat(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4) throw InputError("expected [w,x,y,z] in " + path);
  return Quat(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

}  // namespace

void save_tracks_jsonl(const std::string& path, const std::vector<BodyTrack>& tracks) {
  std::ofstream out = open_out(path);
  for (const BodyTrack& track : tracks) {
    for (int t = 0; t < track.length(); ++t) {
      const auto& slot = track.slots[std::size_t(t)];
      if (!slot) continue;
      json theta = json::array();
      for (const Quat& q : slot->theta) theta.push_back(quat_to_json(q));
      json rec{{"frame", t},
               {"track", track.track_id},
               {"frame_tag", frame_tag_name(track.frame)},
               {"phi", quat_to_json(slot->phi)},
               {"theta", std::move(theta)},
               {"beta", std::vector<double>(slot->beta.data(), slot->beta.data() + slot->beta.size())},
               {"gamma", json::array({slot->gamma.x(), slot->gamma.y(), slot->gamma.z()})}};
      out << rec.dump() << '\n';
    }
  }
  finish(out, path);
}

std::vector<BodyTrack> load_tracks_jsonl(const std::string& path, int frames) {
  std::ifstream in = open_in(path);
  std::map<int, BodyTrack> by_id;
  std::string line;
  int row = 0;
  int max_frame = -1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw InputError(path + ":" + std::to_string(row) + ": " + e.what());
    }
    int frame = 0;
    int id = 0;
    BodyParams p;
    FrameTag tag = FrameTag::world;
    try {
      frame = rec.at("frame").get<int>();
      id = rec.at("track").get<int>();
      p.phi = json_to_quat(rec.at("phi"), path);
      for (const json& q : rec.at("theta")) p.theta.push_back(json_to_quat(q, path));
      std::vector<double> beta = rec.at("beta").get<std::vector<double>>();
      p.beta = Eigen::Map<VecX>(beta.data(), long(beta.size()));
      const json& g = rec.at("gamma");
      if (!g.is_array() || g.size() != 3) throw InputError(path + ": gamma must have 3 entries");
      p.gamma = Vec3(g[0].get<double>(), g[1].get<double>(), g[2].get<double>());
      tag = frame_tag_from_name(rec.at("frame_tag").get<std::string>());
    } catch (const json::exception& e) {
      throw InputError(path + ":" + std::to_string(row) + ": " + e.what());
    }
    if (frame < 0) throw InputError(path + ": negative frame index");
    max_frame = std::max(max_frame, frame);
    auto [it, inserted] = by_id.try_emplace(id);
    BodyTrack& track = it->second;
    if (inserted) {
      track.track_id = id;
      track.frame = tag;
    } else if (track.frame != tag) {
      throw InputError(path + ": track " + std::to_string(id) + " mixes frame tags");
    }
    if (int(track.slots.size()) <= frame) track.slots.resize(std::size_t(frame) + 1);
    if (track.slots[std::size_t(frame)])
      throw InputError(path + ": duplicate record for track " + std::to_string(id) + " frame " +
                       std::to_string(frame));
    track.slots[std::size_t(frame)] = std::move(p);
  }
  int size = frames >= 0 ? frames : max_frame + 1;
  std::vector<BodyTrack> out;
  for (auto& [id, track] : by_id) {
    if (int(track.slots.size()) > size)
      throw InputError(path + ": frame index beyond expected length");
    track.slots.resize(std::size_t(size));
    out.push_back(std::move(track));
  }
  return out;
}

void save_cloud_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream out = open_out(path);
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty double x\nproperty double y\nproperty double z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\n"
         "property double human\nend_header\n";
  for (const CloudPoint& p : cloud) {
    if (!p.xyz.allFinite()) throw InputError("cloud has a non-finite point");
    long rgb[3];
    for (int c = 0; c < 3; ++c)
      rgb[c] = std::clamp(std::lround(p.rgb[c] * 255.0), 0l, 255l);
    out << fmt(p.xyz.x()) << ' ' << fmt(p.xyz.y()) << ' ' << fmt(p.xyz.z()) << ' ' << rgb[0]
        << ' ' << rgb[1] << ' ' << rgb[2] << ' ' << fmt(p.human) << '\n';
  }
  finish(out, path);
}

PointCloud load_cloud_ply(const std::string& path) {
  std::ifstream in = open_in(path);
  const char* expected[] = {"ply",
                            "format ascii 1.0",
                            nullptr,  // element vertex N
                            "property double x",
                            "property double y",
                            "property double z",
                            "property uchar red",
                            "property uchar green",
                            "property uchar blue",
                            "property double human",
                            "end_header"};
  std::size_t count = 0;
  std::string line;
  for (const char* want : expected) {
    if (!std::getline(in, line)) throw InputError("truncated PLY header in " + path);
    if (want == nullptr) {
      std::istringstream ss(line);
      std::string a, b;
      if (!(ss >> a >> b >> count) || a != "element" || b != "vertex")
        throw InputError("bad PLY element line in " + path);
    } else if (line != want) {
      throw InputError("unsupported PLY header line '" + line + "' in " + path);
    }
  }
  PointCloud cloud;
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw InputError("truncated PLY data in " + path);
    std::istringstream ss(line);
    std::vector<std::string> tok;
    std::string word;
    while (ss >> word) tok.push_back(word);
    if (tok.size() != 7) throw InputError("bad PLY row in " + path);
    CloudPoint p;
    p.xyz = Vec3(parse_double(tok[0], path), parse_double(tok[1], path),
                 parse_double(tok[2], path));
    for (int c = 0; c < 3; ++c) {
      double v = parse_double(tok[std::size_t(3 + c)], path);
      if (v < 0 || v > 255 || v != std::floor(v))
        throw InputError("bad PLY color in " + path);
      p.rgb[c] = v / 255.0;
    }
    p.human = parse_double(tok[6], path);
    cloud.add(p);
  }
  return cloud;
}

void save_metrics_json(const std::string& path, const MetricsReport& report) {
  json j{{"pa_mpjpe_mm", report.pa_mpjpe_mm}, {"fa_mpjpe_mm", report.fa_mpjpe_mm},
         {"wa_mpjpe_mm", report.wa_mpjpe_mm}, {"accel_mm_f2", report.accel_mm_f2},
         {"ate_mm", report.ate_mm},           {"delta1", report.delta1},
         {"delta2", report.delta2},           {"delta3", report.delta3},
         {"rel", report.rel},                 {"rmse_m", report.rmse_m}};
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

MetricsReport load_metrics_json(const std::string& path) {
  json j = parse_json_file(path);
  MetricsReport r;
  try {
    r.pa_mpjpe_mm = j.at("pa_mpjpe_mm").get<double>();
    r.fa_mpjpe_mm = j.at("fa_mpjpe_mm").get<double>();
    r.wa_mpjpe_mm = j.at("wa_mpjpe_mm").get<double>();
    r.accel_mm_f2 = j.at("accel_mm_f2").get<double>();
    r.ate_mm = j.at("ate_mm").get<double>();
    r.delta1 = j.at("delta1").get<double>();
    r.delta2 = j.at("delta2").get<double>();
    r.delta3 = j.at("delta3").get<double>();
    r.rel = j.at("rel").get<double>();
    r.rmse_m = j.at("rmse_m").get<double>();
  } catch (const json::exception& e) {
    throw InputError("bad metrics report " + path + ": " + e.what());
  }
  return r;
}

void save_intrinsics_json(const std::string& path, const Intrinsics& intr) {
  json j{{"fx", intr.fx}, {"fy", intr.fy},        {"cx", intr.cx},
         {"cy", intr.cy}, {"width", intr.width},  {"height", intr.height}};
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

Intrinsics load_intrinsics_json(const std::string& path) {
  json j = parse_json_file(path);
  Intrinsics intr;
  try {
    intr.fx = j.at("fx").get<double>();
    intr.fy = j.at("fy").get<double>();
    intr.cx = j.at("cx").get<double>();
    intr.cy = j.at("cy").get<double>();
    intr.width = j.at("width").get<int>();
    intr.height = j.at("height").get<int>();
  } catch (const json::exception& e) {
    throw InputError("bad intrinsics " + path + ": " + e.what());
  }
  intr.validate();
  return intr;
}

void save_observations_json(const std::string& path,
                            const std::vector<std::vector<Vec2>>& anchors,
                            const std::vector<FramePairObservation>& observations) {
  json ja = json::array();
  for (const auto& frame : anchors) {
    json jf = json::array();
    for (const Vec2& px : frame) jf.push_back(vec_to_json(px));
    ja.push_back(std::move(jf));
  }
  json jo = json::array();
  for (const FramePairObservation& o : observations) {
    json targets = json::array(), conf = json::array();
    for (const Vec2& v : o.targets) targets.push_back(vec_to_json(v));
    for (const Vec2& v : o.confidence) conf.push_back(vec_to_json(v));
    jo.push_back(json{{"i", o.i},
                      {"j", o.j},
                      {"anchor_index", o.anchor_index},
                      {"targets", std::move(targets)},
                      {"confidence", std::move(conf)}});
  }
  std::ofstream out = open_out(path);
  out << json{{"anchors", std::move(ja)}, {"observations", std::move(jo)}}.dump(2) << '\n';
  finish(out, path);
}

void load_observations_json(const std::string& path, std::vector<std::vector<Vec2>>& anchors,
                            std::vector<FramePairObservation>& observations) {
  json j = parse_json_file(path);
  anchors.clear();
  observations.clear();
  try {
    for (const json& jf : j.at("anchors")) {
      std::vector<Vec2> frame;
      for (const json& px : jf) frame.push_back(json_to_vec2(px, path));
      anchors.push_back(std::move(frame));
    }
    for (const json& rec : j.at("observations")) {
      FramePairObservation o;
      o.i = rec.at("i").get<int>();
      o.j = rec.at("j").get<int>();
      o.anchor_index = rec.at("anchor_index").get<std::vector<int>>();
      for (const json& v : rec.at("targets")) o.targets.push_back(json_to_vec2(v, path));
      for (const json& v : rec.at("confidence")) o.confidence.push_back(json_to_vec2(v, path));
      if (o.i < 0 || o.i >= int(anchors.size()))
        throw InputError("observation frame out of range in " + path);
      for (int a : o.anchor_index) {
        if (a < 0 || a >= int(anchors[std::size_t(o.i)].size()))
          throw InputError("anchor index out of range in " + path);
        o.pixels.push_back(anchors[std::size_t(o.i)][std::size_t(a)]);
      }
      observations.push_back(std::move(o));
    }
  } catch (const json::exception& e) {
    throw InputError("bad observations file " + path + ": " + e.what());
  }
}

void save_inv_depths_json(const std::string& path, const std::vector<VecX>& inv_depths) {
  json j = json::array();
  for (const VecX& d : inv_depths)
    j.push_back(std::vector<double>(d.data(), d.data() + d.size()));
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

std::vector<VecX> load_inv_depths_json(const std::string& path) {
  json j = parse_json_file(path);
  std::vector<VecX> out;
  try {
    for (const json& frame : j) {
      std::vector<double> v = frame.get<std::vector<double>>();
      out.push_back(Eigen::Map<VecX>(v.data(), long(v.size())));
    }
  } catch (const json::exception& e) {
    throw InputError("bad inverse-depth file " + path + ": " + e.what());
  }
  return out;
}

}  // namespace mhr
