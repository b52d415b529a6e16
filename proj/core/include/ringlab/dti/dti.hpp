#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ringlab/advisory/policy.hpp"
#include "ringlab/driver/driver.hpp"
#include "ringlab/nn/layers.hpp"
#include "ringlab/random.hpp"
#include "ringlab/sim/ring.hpp"

namespace ringlab::dti {

inline constexpr std::size_t kFeatures = 3;

struct DtiConfig {
  std::size_t window = 50;  // T, steps
  std::size_t hidden = 32;
  std::size_t latent = 2;
  double beta_recon = 1.0;
  double beta_kl = 1e-6;
  double learning_rate = 1e-3;
  std::size_t batch = 16;
  int epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

// A window is T observations flattened row-major: x[t * 3 + k].
using Window = std::vector<double>;

struct LossParts {
  nn::Var total;
  nn::Var recon;  // batch mean of ||x_hat - x||_2
  nn::Var kl;     // batch mean of the summed per-dim KL
};

// beta_recon * ||x_hat - x||_2 + beta_kl * sum_d 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2),
// averaged over the batch rows. x_hat and x are (batch x T*3); mu and
// log_var are (batch x latent).
LossParts dti_loss(nn::Var x_hat, nn::Var x, nn::Var mu, nn::Var log_var, double beta_recon, double beta_kl);

enum class LatentMode { Mean, Sample };

struct LatentTrait {
  std::vector<double> z;
  std::vector<double> mu;
  std::vector<double> sigma;
};

// Recurrent variational autoencoder over observation windows. The decoder
// receives z at every step.
class DtiModel {
 public:
  DtiModel() = default;
  DtiModel(std::string name, const DtiConfig& cfg);

  void initialize(Rng& rng);

  struct Forward {
    nn::Var mu;
    nn::Var log_var;
    nn::Var z;
    nn::Var x_hat;
    nn::Var x;
  };
  // noise is (batch x latent) standard normal draws for the reparameterised z.
  Forward forward(nn::Graph& g, std::span<const Window* const> batch, const nn::Tensor& noise);
  LossParts loss(nn::Graph& g, std::span<const Window* const> batch, const nn::Tensor& noise);

  // Encoder only.
  LatentTrait infer(std::span<const double> window, LatentMode mode, Rng& rng) const;

  const DtiConfig& config() const { return cfg_; }
  const std::string& name() const { return name_; }
  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;

  nn::RecurrentCell& encoder() { return encoder_; }
  nn::Linear& mu_head() { return mu_head_; }
  nn::Linear& log_var_head() { return log_var_head_; }

 private:
  struct Encoded {
    nn::Var mu;
    nn::Var log_var;
  };
  Encoded encode(nn::Graph& g, std::span<const Window* const> batch);

  std::string name_;
  DtiConfig cfg_;
  nn::RecurrentCell encoder_;
  nn::Linear mu_head_;
  nn::Linear log_var_head_;
  nn::RecurrentCell decoder_;
  nn::Linear output_;
};

enum class TraitAxis { Delay, Offset };
std::string_view to_string(TraitAxis axis);
TraitAxis parse_trait_axis(std::string_view text);
std::vector<double> trait_values(TraitAxis axis);
double trait_of(const driver::DriverTraits& traits, TraitAxis axis);

struct LabeledWindow {
  Window x;
  driver::DriverTraits traits;
  int hold_steps = 0;
  bool advice_changes = false;
  std::uint64_t episode = 0;
};

struct Dataset {
  TraitAxis axis = TraitAxis::Offset;
  std::size_t window = 50;
  std::vector<LabeledWindow> train;
  std::vector<LabeledWindow> test;

  std::size_t size() const { return train.size() + test.size(); }
  std::uint64_t fingerprint() const;
};

struct DatasetSpec {
  TraitAxis axis = TraitAxis::Offset;
  std::size_t size = 10000;
  std::size_t window = 50;
  std::size_t windows_per_episode = 10;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  // Base PCP per hold length; episodes cycle through the entries.
  std::map<int, const advisory::PolicyModel*> base_policies;
  advisory::ActMode mode = advisory::ActMode::Sample;
  sim::RingConfig ring;
};

// Windows sliced from advised episodes after warm-up. The target trait is
// stratified (size / |values| windows each); the other trait is drawn
// uniformly. Train/test split is per episode within each class.
Dataset gen_dataset(const DatasetSpec& spec);

void write_dataset(const Dataset& data, std::ostream& out);
Dataset read_dataset(std::istream& in);

struct EpochLoss {
  int epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
};

using EpochFn = std::function<void(const EpochLoss&)>;

// Mean loss over windows with a fixed noise stream.
double evaluate_loss(DtiModel& model, std::span<const LabeledWindow> data, std::uint64_t seed);

// Adam over shuffled minibatches. Throws NumericError on a non-finite loss.
std::vector<EpochLoss> train_dti(DtiModel& model, std::span<const LabeledWindow> train,
                                 std::span<const LabeledWindow> test, const DtiConfig& cfg,
                                 const EpochFn& progress = {});

struct SeparationReport {
  std::size_t evaluated = 0;
  std::size_t classes = 0;
  double chance = 0.0;
  double knn_accuracy = 0.0;
  std::optional<double> silhouette;  // empty when fewer than two classes
};

struct LatentPoint {
  std::vector<double> z;
  double label = 0.0;
  int hold_steps = 0;
};

std::vector<LatentPoint> embed(const DtiModel& model, std::span<const LabeledWindow> data, TraitAxis axis,
                               bool changes_only);

// k-NN (majority vote, ties to the nearest) of each query against the
// reference points, plus the silhouette of the query set.
SeparationReport separation(std::span<const LatentPoint> reference, std::span<const LatentPoint> query,
                            std::size_t k = 5);

double silhouette_score(std::span<const LatentPoint> points);

SeparationReport latent_separation_report(const DtiModel& model, const Dataset& data, std::size_t k = 5);

void write_latent_scatter(std::span<const LatentPoint> points, std::ostream& out);

struct TracePoint {
  std::size_t step = 0;
  std::vector<double> z;
};

// Latent of the trailing window at every `stride` steps of an episode.
std::vector<TracePoint> rolling_trace(const DtiModel& model, std::span<const advisory::Observation> observations,
                                      std::size_t stride);

// PeRP conditioning: concatenated latents of several DTI models over the
// trailing window, front-padded with the oldest observation when short.
class DtiLatent final : public advisory::LatentSource {
 public:
  DtiLatent(std::vector<const DtiModel*> models, LatentMode mode);

  std::size_t dim() const override;
  std::size_t history_length() const override;
  std::vector<double> latent(const std::deque<advisory::Observation>& history, Rng& rng) override;

 private:
  std::vector<const DtiModel*> models_;
  LatentMode mode_;
};

Window window_from(std::span<const advisory::Observation> observations, std::size_t length);

}  // namespace ringlab::dti
