#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <utility>

#include "ringlab/harness/experiment.hpp"

namespace ringlab::harness {

// Frozen models resolved by kind and hold length. Files default to
// <dir>/<kind>_d<delta>.rlm and <dir>/dti_<axis>.rlm; explicit paths override
// them. Residual kinds pull their base from the PCP entry of the same delta,
// PeRP additionally both DTI models.
class PolicyLibrary {
 public:
  explicit PolicyLibrary(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}

  static std::filesystem::path policy_file(const std::filesystem::path& dir, advisory::PolicyKind kind, int delta);
  static std::filesystem::path dti_file(const std::filesystem::path& dir, dti::TraitAxis axis);

  // Loads now; throws ArchiveError on a kind or hold-length mismatch.
  void add_policy(advisory::PolicyKind kind, int delta, const std::filesystem::path& path);
  void add_dti(dti::TraitAxis axis, const std::filesystem::path& path);

  // Throws ConfigError naming the missing file.
  PolicySetup setup(advisory::PolicyKind kind, int delta);
  const advisory::PolicyModel& policy(advisory::PolicyKind kind, int delta);
  const dti::DtiModel& dti(dti::TraitAxis axis);

 private:
  std::filesystem::path dir_;
  std::map<std::pair<advisory::PolicyKind, int>, std::unique_ptr<advisory::PolicyModel>> policies_;
  std::map<dti::TraitAxis, std::unique_ptr<dti::DtiModel>> dti_;
};

}  // namespace ringlab::harness
