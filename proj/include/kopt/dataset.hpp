#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "kopt/camera.hpp"
#include "kopt/errors.hpp"
#include "kopt/geometry.hpp"
#include "kopt/io.hpp"
#include "kopt/kinematics.hpp"

namespace kopt {

inline constexpr int kDatasetSchemaVersion = 1;

struct RandomizationConfig {
  Eigen::MatrixXd pose_sigma = Eigen::MatrixXd::Zero(7, 7);  // over [qw qx qy qz bx by bz]
  int lights_lo = 1, lights_hi = 3;
  int distractors_lo = 0, distractors_hi = 5;
  double image_noise_lo = 0.0, image_noise_hi = 1.0;
  double color_noise_sigma = 0.0;  // recorded only, no effect at this scale
  std::uint64_t seed = 0;

  void validate() const {
    if (pose_sigma.rows() != 7 || pose_sigma.cols() != 7)
      throw ConfigError("randomization: pose_sigma must be 7x7");
    if (lights_lo > lights_hi || distractors_lo > distractors_hi ||
        image_noise_lo > image_noise_hi)
      throw ConfigError("randomization: empty nuisance range");
    if (lights_lo < 0 || distractors_lo < 0)
      throw ConfigError("randomization: negative count range");
    if (color_noise_sigma < 0) throw ConfigError("randomization: color_noise_sigma < 0");
  }
};

struct NuisanceDraws {
  int lights = 1;
  int distractors = 0;
  double image_noise = 0.0;
  double color_noise = 0.0;
};

// Per-candidate ground truth. `pixel` is present whenever the point projects
// (in front of the camera), even if occluded; `visible` additionally requires
// passing the occlusion test.
struct GroundTruth {
  int keypoint_id = -1;
  std::optional<Eigen::Vector2d> pixel;
  Eigen::Vector3d p_cam{0, 0, 0};
  bool visible = false;
};

struct SceneSample {
  int sample_id = -1;
  JointConfig q;
  RigidTransform T_cb_true;
  double nuisance = 0.0;  // in [0,1], mean of normalized draws
  NuisanceDraws draws;
  std::vector<GroundTruth> truth;  // aligned with Dataset::candidate_ids
};

struct Dataset {
  std::uint64_t chain_hash = 0;
  CameraModel camera;
  RandomizationConfig rc;
  std::vector<int> candidate_ids;
  std::vector<SceneSample> samples;
  std::vector<int> train_ids;
  std::vector<int> test_ids;

  const SceneSample& sample(int id) const {
    for (const SceneSample& s : samples)
      if (s.sample_id == id) return s;
    throw SchemaError("dataset: unknown sample id " + std::to_string(id));
  }

  int truth_index(int keypoint_id) const {
    for (std::size_t i = 0; i < candidate_ids.size(); ++i)
      if (candidate_ids[i] == keypoint_id) return static_cast<int>(i);
    return -1;
  }

  const GroundTruth& truth_of(const SceneSample& s, int keypoint_id) const {
    const int idx = truth_index(keypoint_id);
    if (idx < 0 || idx >= static_cast<int>(s.truth.size()))
      throw SchemaError("dataset: no ground truth for keypoint " + std::to_string(keypoint_id));
    return s.truth[static_cast<std::size_t>(idx)];
  }

  void validate() const {
    std::set<int> train(train_ids.begin(), train_ids.end());
    std::set<int> test(test_ids.begin(), test_ids.end());
    std::set<int> all;
    for (const SceneSample& s : samples) all.insert(s.sample_id);
    if (train.size() != train_ids.size() || test.size() != test_ids.size())
      throw SchemaError("dataset: duplicate ids inside a split");
    for (int id : train)
      if (test.count(id)) throw SchemaError("dataset: splits overlap at id " + std::to_string(id));
    std::set<int> unioned = train;
    unioned.insert(test.begin(), test.end());
    if (unioned != all) throw SchemaError("dataset: splits do not cover all sample ids");
    for (const SceneSample& s : samples)
      if (s.truth.size() != candidate_ids.size())
        throw SchemaError("dataset: truth/candidate size mismatch in sample " +
                          std::to_string(s.sample_id));
  }
};

// --- JSON helpers (exact double round-trip via shortest-representation dump) ---

inline json camera_to_json(const CameraModel& cam) {
  return json{{"fx", cam.fx},       {"fy", cam.fy},       {"cx", cam.cx},
              {"cy", cam.cy},       {"width", cam.width}, {"height", cam.height}};
}

inline CameraModel camera_from_json(const json& j) {
  CameraModel cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.validate();
  return cam;
}

inline json transform_to_json(const RigidTransform& t) {
  return json{{"quaternion", {t.q.w(), t.q.x(), t.q.y(), t.q.z()}},
              {"translation", {t.b.x(), t.b.y(), t.b.z()}}};
}

// Exact load: values are stored back verbatim (no renormalization).
inline RigidTransform transform_from_json(const json& j) {
  const auto& q = j.at("quaternion");
  const auto& b = j.at("translation");
  RigidTransform t;
  t.q = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                           q.at(3).get<double>());
  t.b = Eigen::Vector3d(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>());
  return t;
}

inline json randomization_to_json(const RandomizationConfig& rc) {
  std::vector<double> sigma(49);
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) sigma[static_cast<std::size_t>(7 * r + c)] = rc.pose_sigma(r, c);
  return json{{"pose_sigma", sigma},
              {"lights", {rc.lights_lo, rc.lights_hi}},
              {"distractors", {rc.distractors_lo, rc.distractors_hi}},
              {"image_noise", {rc.image_noise_lo, rc.image_noise_hi}},
              {"color_noise_sigma", rc.color_noise_sigma},
              {"seed", rc.seed}};
}

inline RandomizationConfig randomization_from_json(const json& j) {
  RandomizationConfig rc;
  const auto& sigma = j.at("pose_sigma");
  if (sigma.size() != 49) throw SchemaError("randomization: pose_sigma must have 49 entries");
  for (int r = 0; r < 7; ++r)
    for (int c = 0; c < 7; ++c) rc.pose_sigma(r, c) = sigma.at(7 * r + c).get<double>();
  rc.lights_lo = j.at("lights").at(0).get<int>();
  rc.lights_hi = j.at("lights").at(1).get<int>();
  rc.distractors_lo = j.at("distractors").at(0).get<int>();
  rc.distractors_hi = j.at("distractors").at(1).get<int>();
  rc.image_noise_lo = j.at("image_noise").at(0).get<double>();
  rc.image_noise_hi = j.at("image_noise").at(1).get<double>();
  rc.color_noise_sigma = j.at("color_noise_sigma").get<double>();
  rc.seed = j.at("seed").get<std::uint64_t>();
  rc.validate();
  return rc;
}

inline json sample_to_json(const SceneSample& s) {
  json truth = json::array();
  for (const GroundTruth& g : s.truth) {
    json rec{{"id", g.keypoint_id}, {"visible", g.visible}};
    if (g.pixel)
      rec["h"] = {g.pixel->x(), g.pixel->y()};
    else
      rec["h"] = nullptr;
    rec["p_cam"] = {g.p_cam.x(), g.p_cam.y(), g.p_cam.z()};
    truth.push_back(std::move(rec));
  }
  std::vector<double> q(s.q.data(), s.q.data() + s.q.size());
  return json{{"sample_id", s.sample_id},
              {"q", q},
              {"T_cb_true", transform_to_json(s.T_cb_true)},
              {"nuisance", s.nuisance},
              {"draws",
               {{"lights", s.draws.lights},
                {"distractors", s.draws.distractors},
                {"image_noise", s.draws.image_noise},
                {"color_noise", s.draws.color_noise}}},
              {"truth", std::move(truth)}};
}

inline SceneSample sample_from_json(const json& j) {
  SceneSample s;
  s.sample_id = j.at("sample_id").get<int>();
  const auto& q = j.at("q");
  s.q.resize(static_cast<Eigen::Index>(q.size()));
  for (std::size_t i = 0; i < q.size(); ++i)
    s.q[static_cast<Eigen::Index>(i)] = q.at(i).get<double>();
  s.T_cb_true = transform_from_json(j.at("T_cb_true"));
  s.nuisance = j.at("nuisance").get<double>();
  const auto& d = j.at("draws");
  s.draws.lights = d.at("lights").get<int>();
  s.draws.distractors = d.at("distractors").get<int>();
  s.draws.image_noise = d.at("image_noise").get<double>();
  s.draws.color_noise = d.at("color_noise").get<double>();
  for (const auto& rec : j.at("truth")) {
    GroundTruth g;
    g.keypoint_id = rec.at("id").get<int>();
    g.visible = rec.at("visible").get<bool>();
    if (!rec.at("h").is_null())
      g.pixel = Eigen::Vector2d(rec.at("h").at(0).get<double>(), rec.at("h").at(1).get<double>());
    g.p_cam = Eigen::Vector3d(rec.at("p_cam").at(0).get<double>(),
                              rec.at("p_cam").at(1).get<double>(),
                              rec.at("p_cam").at(2).get<double>());
    s.truth.push_back(std::move(g));
  }
  return s;
}

// File layout: header JSON line, one JSON line per sample, then a trailing
// {"checksum": "<fnv1a64 hex of everything before it>"} line.
inline std::string serialize_dataset(const Dataset& ds) {
  json header{{"schema_version", kDatasetSchemaVersion},
              {"chain_hash", hex64(ds.chain_hash)},
              {"candidate_ids", ds.candidate_ids},
              {"camera", camera_to_json(ds.camera)},
              {"randomization_config", randomization_to_json(ds.rc)},
              {"split", {{"train", ds.train_ids}, {"test", ds.test_ids}}}};
  std::string payload = header.dump();
  payload.push_back('\n');
  for (const SceneSample& s : ds.samples) {
    payload += sample_to_json(s).dump();
    payload.push_back('\n');
  }
  json tail{{"checksum", hex64(fnv1a64(payload))}};
  return payload + tail.dump() + "\n";
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  write_text_file(path, serialize_dataset(ds));
}

inline Dataset parse_dataset(const std::string& text) {
  // Split into lines; last non-empty line is the checksum record.
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 2) throw SchemaError("dataset: file too short");

  const json tail = parse_json(lines.back(), "dataset checksum line");
  if (!tail.contains("checksum")) throw SchemaError("dataset: missing checksum line");
  std::string payload;
  for (std::size_t i = 0; i + 1 < lines.size(); ++i) {
    payload += lines[i];
    payload.push_back('\n');
  }
  if (tail.at("checksum").get<std::string>() != hex64(fnv1a64(payload)))
    throw SchemaError("dataset: checksum mismatch (file truncated or edited)");

  const json header = parse_json(lines[0], "dataset header");
  const int version = header.at("schema_version").get<int>();
  if (version != kDatasetSchemaVersion)
    throw SchemaError("dataset: schema version " + std::to_string(version) + " unsupported (want " +
                      std::to_string(kDatasetSchemaVersion) + ")");

  Dataset ds;
  ds.chain_hash = std::stoull(header.at("chain_hash").get<std::string>(), nullptr, 16);
  ds.candidate_ids = header.at("candidate_ids").get<std::vector<int>>();
  ds.camera = camera_from_json(header.at("camera"));
  ds.rc = randomization_from_json(header.at("randomization_config"));
  ds.train_ids = header.at("split").at("train").get<std::vector<int>>();
  ds.test_ids = header.at("split").at("test").get<std::vector<int>>();
  for (std::size_t i = 1; i + 1 < lines.size(); ++i)
    ds.samples.push_back(sample_from_json(parse_json(lines[i], "dataset sample")));
  ds.validate();
  return ds;
}

inline Dataset load_dataset(const std::string& path) { return parse_dataset(read_text_file(path)); }

}  // namespace kopt
