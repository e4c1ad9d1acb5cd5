#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "kopt/errors.hpp"
#include "kopt/geometry.hpp"
#include "kopt/io.hpp"
#include "kopt/rng.hpp"

namespace kopt {

enum class JointType { revolute, prismatic, fixed };

// Collision primitive in the link frame: segment [a, b] swept by a sphere.
struct Capsule {
  Eigen::Vector3d a{0, 0, 0};
  Eigen::Vector3d b{0, 0, 0};
  double radius = 0;
};

struct Link {
  std::string name;
  int parent = -1;  // -1 for the root; otherwise an earlier link index
  JointType joint_type = JointType::fixed;
  Eigen::Vector3d joint_axis{0, 0, 1};
  RigidTransform fixed_transform;
  double lo = 0, hi = 0;  // joint limits (rad or m), unused for fixed links
  std::vector<Capsule> capsules;
};

// 3D point rigidly attached to a link, optionally tagged with a sampling
// group for constrained selection (e.g. one keypoint per gripper jaw).
struct Keypoint {
  int id = 0;
  int link = 0;
  Eigen::Vector3d offset{0, 0, 0};
  int group = -1;  // -1 = ungrouped
};

using JointConfig = Eigen::VectorXd;

class KinematicChain {
 public:
  KinematicChain() = default;

  KinematicChain(std::string name, std::vector<Link> links)
      : name_(std::move(name)), links_(std::move(links)) {
    validate();
    joint_index_.assign(links_.size(), -1);
    for (std::size_t i = 0; i < links_.size(); ++i) {
      if (links_[i].joint_type != JointType::fixed) joint_index_[i] = joint_count_++;
    }
  }

  const std::string& name() const { return name_; }
  const std::vector<Link>& links() const { return links_; }
  int joint_count() const { return joint_count_; }

  // Joint slot of a link in a JointConfig vector; -1 for fixed links.
  int joint_index(int link) const { return joint_index_.at(static_cast<std::size_t>(link)); }

  // Base-frame pose of every link at configuration q. Link n's pose is the
  // product of fixed and joint transforms along its root-to-link path.
  std::vector<RigidTransform> forward_kinematics(const JointConfig& q) const {
    if (q.size() != joint_count_)
      throw std::invalid_argument("joint config has " + std::to_string(q.size()) +
                                  " values, chain expects " + std::to_string(joint_count_));
    std::vector<RigidTransform> out(links_.size());
    for (std::size_t n = 0; n < links_.size(); ++n) {
      const Link& link = links_[n];
      const RigidTransform parent =
          link.parent >= 0 ? out[static_cast<std::size_t>(link.parent)] : RigidTransform::identity();
      RigidTransform local = link.fixed_transform;
      if (link.joint_type != JointType::fixed) local = local * joint_transform(link, q[joint_index_[n]]);
      out[n] = parent * local;
    }
    return out;
  }

  Eigen::Vector3d keypoint_base_position(const JointConfig& q, const Keypoint& kp) const {
    if (kp.link < 0 || kp.link >= static_cast<int>(links_.size()))
      throw std::invalid_argument("keypoint link index out of range");
    return forward_kinematics(q)[static_cast<std::size_t>(kp.link)].apply(kp.offset);
  }

  // Uniform draw within the joint limits, one value per non-fixed joint in
  // link order.
  JointConfig sample_joint_config(Rng& rng) const {
    JointConfig q(joint_count_);
    for (std::size_t n = 0; n < links_.size(); ++n) {
      const int j = joint_index_[n];
      if (j >= 0) q[j] = rng.uniform(links_[n].lo, links_[n].hi);
    }
    return q;
  }

  static RigidTransform joint_transform(const Link& link, double qn) {
    switch (link.joint_type) {
      case JointType::revolute:
        return {Eigen::Quaterniond(Eigen::AngleAxisd(qn, link.joint_axis)), Eigen::Vector3d::Zero()};
      case JointType::prismatic:
        return {Eigen::Quaterniond::Identity(), link.joint_axis * qn};
      case JointType::fixed:
        return RigidTransform::identity();
    }
    return RigidTransform::identity();
  }

 private:
  void validate() const {
    if (links_.empty()) throw ConfigError("chain has no links");
    for (std::size_t n = 0; n < links_.size(); ++n) {
      const Link& link = links_[n];
      if (n == 0) {
        if (link.parent != -1) throw ConfigError("root link must have parent -1");
      } else if (link.parent < 0 || link.parent >= static_cast<int>(n)) {
        throw ConfigError("link '" + link.name + "': parent must be an earlier link (cycle?)");
      }
      if (!is_rotation_orthonormal(link.fixed_transform.rotation()))
        throw ConfigError("link '" + link.name + "': fixed transform rotation is not orthonormal");
      if (link.joint_type != JointType::fixed) {
        if (std::abs(link.joint_axis.norm() - 1.0) > 1e-9)
          throw ConfigError("link '" + link.name + "': joint axis is not unit length");
        if (link.lo > link.hi)
          throw ConfigError("link '" + link.name + "': joint limits inverted (lo > hi)");
      }
      for (const Capsule& c : link.capsules) {
        if (!(c.radius > 0.0)) throw ConfigError("link '" + link.name + "': capsule radius must be > 0");
      }
    }
  }

  std::string name_;
  std::vector<Link> links_;
  std::vector<int> joint_index_;
  int joint_count_ = 0;
};

// The N candidate keypoints the optimizer selects from.
struct CandidateSet {
  std::vector<Keypoint> keypoints;

  bool grouped() const {
    return !keypoints.empty() && keypoints.front().group >= 0;
  }

  // group id -> member keypoint ids, deterministic order.
  std::map<int, std::vector<int>> groups() const {
    std::map<int, std::vector<int>> out;
    for (const Keypoint& kp : keypoints) out[kp.group].push_back(kp.id);
    return out;
  }

  const Keypoint& by_id(int id) const {
    const Keypoint* kp = find(id);
    if (!kp) throw std::invalid_argument("unknown keypoint id " + std::to_string(id));
    return *kp;
  }

  const Keypoint* find(int id) const {
    for (const Keypoint& kp : keypoints)
      if (kp.id == id) return &kp;
    return nullptr;
  }

  void validate(const KinematicChain& chain) const {
    std::map<int, int> seen;
    int with_group = 0;
    for (const Keypoint& kp : keypoints) {
      if (seen.count(kp.id)) throw ConfigError("duplicate keypoint id " + std::to_string(kp.id));
      seen[kp.id] = 1;
      if (kp.link < 0 || kp.link >= static_cast<int>(chain.links().size()))
        throw ConfigError("keypoint " + std::to_string(kp.id) + ": link index out of range");
      if (kp.group >= 0) ++with_group;
    }
    if (with_group != 0 && with_group != static_cast<int>(keypoints.size()))
      throw ConfigError("keypoint groups must cover either all candidates or none");
  }
};

// End-effector definition for the evaluation metrics; defaults to the origin
// of the last link when the config does not name one.
struct EndEffector {
  int link = 0;
  Eigen::Vector3d offset{0, 0, 0};
};

struct RobotModel {
  KinematicChain chain;
  CandidateSet candidates;
  EndEffector ee;
  std::uint64_t hash = 0;  // over the canonical config serialization
};

namespace detail {

inline Eigen::Vector3d parse_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(what + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline RigidTransform parse_transform(const json& j, const std::string& what) {
  RigidTransform t;
  if (j.contains("quaternion")) {
    const json& q = j["quaternion"];
    if (!q.is_array() || q.size() != 4) throw ConfigError(what + ": quaternion must be wxyz");
    Eigen::Quaterniond quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                            q[3].get<double>());
    const double n = quat.norm();
    if (std::abs(n - 1.0) > 1e-3) throw ConfigError(what + ": quaternion is far from unit length");
    quat.coeffs() /= n;
    t.q = quat;
  }
  if (j.contains("translation")) t.b = parse_vec3(j["translation"], what + ": translation");
  return t;
}

}  // namespace detail

inline RobotModel parse_robot_config(const json& doc) {
  if (!doc.is_object() || !doc.contains("links"))
    throw ConfigError("robot config: missing 'links'");
  std::vector<Link> links;
  for (const json& jl : doc["links"]) {
    Link link;
    link.name = jl.value("name", "link" + std::to_string(links.size()));
    link.parent = jl.value("parent", static_cast<int>(links.size()) - 1);
    if (jl.contains("transform"))
      link.fixed_transform = detail::parse_transform(jl["transform"], "link '" + link.name + "'");
    if (jl.contains("joint")) {
      const json& jj = jl["joint"];
      const std::string type = jj.value("type", "fixed");
      if (type == "revolute")
        link.joint_type = JointType::revolute;
      else if (type == "prismatic")
        link.joint_type = JointType::prismatic;
      else if (type == "fixed")
        link.joint_type = JointType::fixed;
      else
        throw ConfigError("link '" + link.name + "': unknown joint type '" + type + "'");
      if (link.joint_type != JointType::fixed) {
        if (!jj.contains("axis") || !jj.contains("limits"))
          throw ConfigError("link '" + link.name + "': joint needs axis and limits");
        Eigen::Vector3d axis = detail::parse_vec3(jj["axis"], "joint axis");
        const double n = axis.norm();
        if (std::abs(n - 1.0) > 1e-6)
          throw ConfigError("link '" + link.name + "': joint axis is not unit length");
        link.joint_axis = axis / n;
        const json& lim = jj["limits"];
        if (!lim.is_array() || lim.size() != 2)
          throw ConfigError("link '" + link.name + "': limits must be [lo, hi]");
        link.lo = lim[0].get<double>();
        link.hi = lim[1].get<double>();
      }
    }
    if (jl.contains("capsules")) {
      for (const json& jc : jl["capsules"]) {
        Capsule c;
        c.a = detail::parse_vec3(jc.at("a"), "capsule endpoint a");
        c.b = detail::parse_vec3(jc.at("b"), "capsule endpoint b");
        c.radius = jc.at("radius").get<double>();
        link.capsules.push_back(c);
      }
    }
    links.push_back(std::move(link));
  }

  RobotModel model;
  model.chain = KinematicChain(doc.value("name", "robot"), std::move(links));
  if (doc.contains("keypoints")) {
    for (const json& jk : doc["keypoints"]) {
      Keypoint kp;
      kp.id = jk.at("id").get<int>();
      kp.link = jk.at("link").get<int>();
      kp.offset = detail::parse_vec3(jk.at("offset"), "keypoint offset");
      kp.group = jk.value("group", -1);
      model.candidates.keypoints.push_back(kp);
    }
  }
  model.candidates.validate(model.chain);

  model.ee.link = static_cast<int>(model.chain.links().size()) - 1;
  if (doc.contains("ee")) {
    model.ee.link = doc["ee"].value("link", model.ee.link);
    if (doc["ee"].contains("offset"))
      model.ee.offset = detail::parse_vec3(doc["ee"]["offset"], "ee offset");
    if (model.ee.link < 0 || model.ee.link >= static_cast<int>(model.chain.links().size()))
      throw ConfigError("ee link index out of range");
  }
  model.hash = fnv1a64(doc.dump());
  return model;
}

inline RobotModel load_robot(const std::filesystem::path& path) {
  return parse_robot_config(load_json_file(path));
}

inline KinematicChain load_chain(const std::filesystem::path& path) {
  return load_robot(path).chain;
}

}  // namespace kopt
