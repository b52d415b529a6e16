#include "ringlab/harness/library.hpp"

#include "ringlab/error.hpp"
#include "ringlab/harness/archive.hpp"

namespace ringlab::harness {

std::filesystem::path PolicyLibrary::policy_file(const std::filesystem::path& dir, advisory::PolicyKind kind,
                                                 int delta) {
  return dir / (std::string(advisory::to_string(kind)) + "_d" + std::to_string(delta) + ".rlm");
}

std::filesystem::path PolicyLibrary::dti_file(const std::filesystem::path& dir, dti::TraitAxis axis) {
  return dir / ("dti_" + std::string(dti::to_string(axis)) + ".rlm");
}

void PolicyLibrary::add_policy(advisory::PolicyKind kind, int delta, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("archive '" + path.string() + "' does not exist");
  auto model = std::make_unique<advisory::PolicyModel>(restore_policy(load_archive(path), kind));
  if (model->hold_steps() != delta) {
    throw ArchiveError("archive '" + path.string() + "' was trained with delta " +
                       std::to_string(model->hold_steps()) + ", not " + std::to_string(delta));
  }
  policies_[{kind, delta}] = std::move(model);
}

void PolicyLibrary::add_dti(dti::TraitAxis axis, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("DTI archive '" + path.string() + "' does not exist");
  const ModelArchive a = load_archive(path);
  if (a.header.trait_axis != dti::to_string(axis)) {
    throw ArchiveError("DTI archive '" + path.string() + "' encodes the " + a.header.trait_axis + " trait, not " +
                       std::string(dti::to_string(axis)));
  }
  dti_[axis] = std::make_unique<dti::DtiModel>(restore_dti(a));
}

const advisory::PolicyModel& PolicyLibrary::policy(advisory::PolicyKind kind, int delta) {
  if (auto it = policies_.find({kind, delta}); it != policies_.end()) return *it->second;
  const auto path = policy_file(dir_, kind, delta);
  if (!std::filesystem::exists(path)) {
    throw ConfigError("no " + std::string(advisory::to_string(kind)) + " policy for delta " +
                      std::to_string(delta) + ": missing archive '" + path.string() + "'");
  }
  add_policy(kind, delta, path);
  return *policies_.at({kind, delta});
}

const dti::DtiModel& PolicyLibrary::dti(dti::TraitAxis axis) {
  if (auto it = dti_.find(axis); it != dti_.end()) return *it->second;
  const auto path = dti_file(dir_, axis);
  if (!std::filesystem::exists(path)) {
    throw ConfigError("no " + std::string(dti::to_string(axis)) + " DTI model: missing archive '" + path.string() +
                      "'");
  }
  add_dti(axis, path);
  return *dti_.at(axis);
}

PolicySetup PolicyLibrary::setup(advisory::PolicyKind kind, int delta) {
  using advisory::PolicyKind;
  PolicySetup s{kind, delta, nullptr, nullptr, {}};
  if (kind == PolicyKind::Osl) return s;
  s.base = &policy(PolicyKind::Pcp, delta);
  if (kind == PolicyKind::Pcp) return s;
  s.residual = &policy(kind, delta);
  std::size_t latent = 0;
  if (kind == PolicyKind::Tarp) {
    s.latent = trainer::trait_latents();
    latent = advisory::kTraitEncodingWidth;
  } else if (kind == PolicyKind::Perp) {
    const dti::DtiModel& delay = dti(dti::TraitAxis::Delay);
    const dti::DtiModel& offset = dti(dti::TraitAxis::Offset);
    s.latent = dti_latents({&delay, &offset}, dti::LatentMode::Mean);
    latent = delay.config().latent + offset.config().latent;
  }
  if (s.residual->latent_dim() != latent) {
    throw ArchiveError(std::string(advisory::to_string(kind)) + " policy expects a latent of width " +
                       std::to_string(s.residual->latent_dim()) + " but its conditioning provides " +
                       std::to_string(latent));
  }
  return s;
}

}  // namespace ringlab::harness
