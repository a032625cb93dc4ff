#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfrl/autoencoder.hpp"
#include "cfrl/blackbox.hpp"
#include "cfrl/conditioning.hpp"
#include "cfrl/data.hpp"
#include "cfrl/ddpg.hpp"

namespace cfrl::gen {

// Target placeholder: any class other than the model's prediction, drawn per instance.
inline constexpr std::size_t kAnyOtherClass = std::numeric_limits<std::size_t>::max();

struct CounterfactualRequest {
  std::vector<data::InstanceRecord> instances;
  std::vector<std::size_t> targets;  // one per instance, or kAnyOtherClass
  cond::ConstraintSet constraints;
};

struct CounterfactualResult {
  std::size_t instance = 0;  // row of the request
  std::size_t sample = 0;    // draw index in diverse mode
  data::InstanceRecord original;
  data::InstanceRecord counterfactual;
  std::size_t original_label = 0;
  std::size_t target = 0;
  std::size_t predicted = 0;
  bool valid = false;
  bool found = true;  // false when a baseline has nothing to return
  cond::FeatureCondition condition;
};

// The components a generation call needs; all must share one schema.
struct Explainer {
  const data::TabularSchema& schema;
  const blackbox::BlackBoxModel& model;
  const ae::TabularAutoencoder& ae;
  const ddpg::TrainedPolicy& policy;

  void check() const;  // ConfigError on fingerprint or shape mismatch
};

// Resolves kAnyOtherClass against the model labels; explicit targets are range-checked.
std::vector<std::size_t> resolve_targets(std::span<const std::size_t> requested, std::span<const std::size_t> labels,
                                         std::size_t class_count, std::uint64_t seed);

// Greedy generation: one labeling of the inputs, one actor pass, one labeling of the outputs.
std::vector<CounterfactualResult> generate(const Explainer& ex, const CounterfactualRequest& request,
                                           std::uint64_t seed = 0);

// k results per instance, each under an independently sampled condition; targets stay fixed per instance.
std::vector<CounterfactualResult> generate_diverse(const Explainer& ex, const CounterfactualRequest& request,
                                                   std::size_t k, Rng& rng);

nlohmann::json results_to_json(std::span<const CounterfactualResult> results, const data::TabularSchema& schema);
std::vector<CounterfactualResult> results_from_json(const nlohmann::json& doc, const data::TabularSchema& schema);
// Columns: instance, sample, x.<feature>..., cf.<feature>..., original, target, predicted, valid.
void write_results_csv(std::ostream& out, std::span<const CounterfactualResult> results,
                       const data::TabularSchema& schema);

}  // namespace cfrl::gen
