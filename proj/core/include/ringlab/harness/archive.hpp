#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ringlab/advisory/policy.hpp"
#include "ringlab/dti/dti.hpp"

namespace ringlab::harness {

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

struct ArchiveHeader {
  std::uint32_t format_version = kArchiveFormatVersion;
  std::string kind;  // policy kind or "dti"
  std::string name;
  int hold_steps = 0;
  double a_max = 0.0;
  std::vector<double> base_grid;
  std::vector<double> residual_grid;
  int input_layout_version = 0;
  std::size_t latent_dim = 0;
  std::vector<std::size_t> hidden;
  std::uint64_t config_hash = 0;
  // DTI only.
  std::string trait_axis;
  std::size_t window = 0;
  double beta_recon = 0.0;
  double beta_kl = 0.0;

  bool operator==(const ArchiveHeader&) const = default;
};

struct TensorBlob {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;

  bool operator==(const TensorBlob&) const = default;
};

// Binary layout, all integers little-endian:
//   "RLAB" | u32 version | u32 header bytes | header JSON
//   | u32 tensor count | per tensor: u32 name bytes, name, u32 rank, u64 dims[rank], f64 data
//   | u32 CRC-32 of everything before it
struct ModelArchive {
  ArchiveHeader header;
  std::vector<TensorBlob> tensors;
};

std::vector<std::uint8_t> encode_archive(const ModelArchive& archive);
// Throws ArchiveError on a bad magic, checksum, version or truncated blob.
ModelArchive decode_archive(std::span<const std::uint8_t> bytes);

void save_archive(const ModelArchive& archive, const std::filesystem::path& path);
ModelArchive load_archive(const std::filesystem::path& path);

ModelArchive archive_policy(const advisory::PolicyModel& policy, std::uint64_t config_hash);
// Throws ArchiveError when the stored kind is not one of `expected` or the
// input layout version differs from this build's.
advisory::PolicyModel restore_policy(const ModelArchive& archive, std::span<const advisory::PolicyKind> expected);
advisory::PolicyModel restore_policy(const ModelArchive& archive, advisory::PolicyKind expected);

ModelArchive archive_dti(const dti::DtiModel& model, dti::TraitAxis axis, std::uint64_t config_hash);
dti::DtiModel restore_dti(const ModelArchive& archive);

}  // namespace ringlab::harness
