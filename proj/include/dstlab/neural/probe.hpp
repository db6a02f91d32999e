#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "dstlab/corpus.hpp"
#include "dstlab/neural/train.hpp"

namespace dstlab::neural {

struct ProbeConfig {
  int d_model = 16;
  int n_heads = 2;
  int stride = 6;
  bool use_connector = true;
  /// The encoder stub is always frozen; the connector is frozen too unless
  /// this is set. Compressor and readout always train.
  bool train_connector = false;
  /// Minibatch Adam. The shuffle seed is derived from model_seed.
  TrainHyper hyper{0.02, 40, Optimizer::Adam, 32, 0};
  /// Leading fraction of examples (in corpus order) used for training; the
  /// rest is held out.
  double train_fraction = 0.75;
  std::uint64_t model_seed = 1;
};

struct ProbeResult {
  int n_queries = 0;
  double heldout_accuracy = 0.0;
  double train_accuracy = 0.0;
  std::size_t n_train = 0;
  std::size_t n_heldout = 0;
  std::vector<double> loss_trace;
};

/// One example per USER turn that mentions at least one slot. There is one
/// readout head per synthetic-ontology slot; class 0 means "not mentioned in
/// this turn", class i+1 is the slot's i-th value. Only mentioned slots are
/// scored.
std::vector<Example> probe_examples(const std::vector<Dialogue>& corpus);
std::vector<int> probe_head_sizes();

ModelConfig probe_model_config(const ProbeConfig& cfg, int feature_dim, int n_queries);
ParameterMask probe_mask(const ProbeConfig& cfg);

/// For each N in the list: train compressor + readout on the training split
/// and report held-out slot-recovery accuracy. No monotonicity is implied.
std::map<int, ProbeResult> probe_retention(const std::vector<Dialogue>& corpus,
                                           const std::vector<int>& n_queries_list,
                                           const ProbeConfig& cfg);

}  // namespace dstlab::neural
