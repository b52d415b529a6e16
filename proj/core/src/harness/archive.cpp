#include "ringlab/harness/archive.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <boost/crc.hpp>
#include <json.hpp>

#include "ringlab/error.hpp"

namespace ringlab::harness {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'R', 'L', 'A', 'B'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw ArchiveError("archive is truncated");
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    auto b = take(n);
    return {b.begin(), b.end()};
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

json header_json(const ArchiveHeader& h) {
  return {{"format_version", h.format_version},
          {"kind", h.kind},
          {"name", h.name},
          {"hold_steps", h.hold_steps},
          {"a_max", h.a_max},
          {"base_grid", h.base_grid},
          {"residual_grid", h.residual_grid},
          {"input_layout_version", h.input_layout_version},
          {"latent_dim", h.latent_dim},
          {"hidden", h.hidden},
          {"config_hash", h.config_hash},
          {"trait_axis", h.trait_axis},
          {"window", h.window},
          {"beta_recon", h.beta_recon},
          {"beta_kl", h.beta_kl}};
}

ArchiveHeader header_from(const json& j) {
  ArchiveHeader h;
  try {
    j.at("format_version").get_to(h.format_version);
    j.at("kind").get_to(h.kind);
    j.at("name").get_to(h.name);
    j.at("hold_steps").get_to(h.hold_steps);
    j.at("a_max").get_to(h.a_max);
    j.at("base_grid").get_to(h.base_grid);
    j.at("residual_grid").get_to(h.residual_grid);
    j.at("input_layout_version").get_to(h.input_layout_version);
    j.at("latent_dim").get_to(h.latent_dim);
    j.at("hidden").get_to(h.hidden);
    j.at("config_hash").get_to(h.config_hash);
    j.at("trait_axis").get_to(h.trait_axis);
    j.at("window").get_to(h.window);
    j.at("beta_recon").get_to(h.beta_recon);
    j.at("beta_kl").get_to(h.beta_kl);
  } catch (const json::exception& e) {
    throw ArchiveError(std::string("archive header is malformed: ") + e.what());
  }
  return h;
}

TensorBlob blob_of(const nn::Parameter& p) {
  return {p.name, p.value.shape(), p.value.storage()};
}

void load_into(const std::vector<nn::Parameter*>& params, const std::vector<TensorBlob>& blobs) {
  if (params.size() != blobs.size()) {
    throw ArchiveError("archive has " + std::to_string(blobs.size()) + " tensors, model expects " +
                       std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const TensorBlob& b = blobs[i];
    if (b.name != params[i]->name || b.shape != params[i]->value.shape()) {
      throw ArchiveError("archive tensor '" + b.name + "' " + std::to_string(b.data.size()) +
                         " values does not match model parameter '" + params[i]->name + "' " +
                         params[i]->value.shape_string());
    }
    params[i]->value = nn::Tensor(b.shape, b.data);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_archive(const ModelArchive& archive) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(archive.header.format_version);
  w.str(header_json(archive.header).dump());
  w.u32(static_cast<std::uint32_t>(archive.tensors.size()));
  for (const TensorBlob& t : archive.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    std::size_t count = 1;
    for (std::size_t d : t.shape) {
      w.u64(d);
      count *= d;
    }
    if (count != t.data.size()) throw DimensionError("tensor '" + t.name + "' shape does not match its data");
    for (double v : t.data) w.f64(v);
  }
  const std::uint32_t crc = crc32(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

ModelArchive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ArchiveError("not a model archive (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (crc32(body) != tail.u32()) throw ArchiveError("archive checksum mismatch: file is corrupted");

  Reader r(body);
  r.take(sizeof kMagic);
  const std::uint32_t version = r.u32();
  if (version != kArchiveFormatVersion) {
    throw ArchiveError("archive format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kArchiveFormatVersion) + ")");
  }
  ModelArchive out;
  json j;
  try {
    j = json::parse(r.str());
  } catch (const json::exception& e) {
    throw ArchiveError(std::string("archive header is not JSON: ") + e.what());
  }
  out.header = header_from(j);
  if (out.header.format_version != version) throw ArchiveError("archive header version disagrees with preamble");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorBlob t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.u64());
      n *= t.shape.back();
    }
    t.data.reserve(n);
    for (std::size_t k = 0; k < n; ++k) t.data.push_back(r.f64());
    out.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ArchiveError("archive has trailing bytes");
  return out;
}

void save_archive(const ModelArchive& archive, const std::filesystem::path& path) {
  const auto bytes = encode_archive(archive);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot write archive '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArchiveError("failed writing archive '" + path.string() + "'");
}

ModelArchive load_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open archive '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

ModelArchive archive_policy(const advisory::PolicyModel& policy, std::uint64_t config_hash) {
  ModelArchive a;
  a.header.kind = std::string(advisory::to_string(policy.kind()));
  a.header.name = a.header.kind;
  a.header.hold_steps = policy.hold_steps();
  a.header.a_max = policy.grid().a_max;
  a.header.base_grid = policy.grid().base;
  a.header.residual_grid = policy.grid().residual;
  a.header.input_layout_version = advisory::kInputLayoutVersion;
  a.header.latent_dim = policy.latent_dim();
  a.header.hidden = policy.hidden();
  a.header.config_hash = config_hash;
  for (const nn::Parameter* p : policy.net().parameters()) a.tensors.push_back(blob_of(*p));
  return a;
}

advisory::PolicyModel restore_policy(const ModelArchive& archive, std::span<const advisory::PolicyKind> expected) {
  const ArchiveHeader& h = archive.header;
  if (h.kind == "dti") throw ArchiveError("archive holds a DTI model, not a policy");
  const advisory::PolicyKind kind = advisory::parse_policy_kind(h.kind);
  if (std::find(expected.begin(), expected.end(), kind) == expected.end()) {
    std::string want;
    for (advisory::PolicyKind k : expected) want += (want.empty() ? "" : "/") + std::string(advisory::to_string(k));
    throw ArchiveError("archive holds a " + h.kind + " policy, expected " + want);
  }
  if (h.input_layout_version != advisory::kInputLayoutVersion) {
    throw ArchiveError("archive input layout version " + std::to_string(h.input_layout_version) +
                       " differs from this build's " + std::to_string(advisory::kInputLayoutVersion) +
                       "; retrain the policy or use a matching build");
  }
  advisory::ActionGrid grid;
  grid.a_max = h.a_max;
  grid.base = h.base_grid;
  grid.residual = h.residual_grid;
  advisory::PolicyModel policy(kind, h.hold_steps, grid, h.latent_dim, h.hidden);
  load_into(policy.parameters(), archive.tensors);
  return policy;
}

advisory::PolicyModel restore_policy(const ModelArchive& archive, advisory::PolicyKind expected) {
  const advisory::PolicyKind one[] = {expected};
  return restore_policy(archive, one);
}

ModelArchive archive_dti(const dti::DtiModel& model, dti::TraitAxis axis, std::uint64_t config_hash) {
  ModelArchive a;
  a.header.kind = "dti";
  a.header.name = model.name();
  a.header.trait_axis = std::string(dti::to_string(axis));
  a.header.window = model.config().window;
  a.header.hidden = {model.config().hidden};
  a.header.latent_dim = model.config().latent;
  a.header.beta_recon = model.config().beta_recon;
  a.header.beta_kl = model.config().beta_kl;
  a.header.config_hash = config_hash;
  for (const nn::Parameter* p : model.parameters()) a.tensors.push_back(blob_of(*p));
  return a;
}

dti::DtiModel restore_dti(const ModelArchive& archive) {
  const ArchiveHeader& h = archive.header;
  if (h.kind != "dti") throw ArchiveError("archive holds a " + h.kind + " policy, expected a DTI model");
  if (h.hidden.size() != 1) throw ArchiveError("DTI archive must record one hidden size");
  dti::DtiConfig cfg;
  cfg.window = h.window;
  cfg.hidden = h.hidden.front();
  cfg.latent = h.latent_dim;
  cfg.beta_recon = h.beta_recon;
  cfg.beta_kl = h.beta_kl;
  dti::DtiModel model(h.name, cfg);
  load_into(model.parameters(), archive.tensors);
  return model;
}

}  // namespace ringlab::harness
