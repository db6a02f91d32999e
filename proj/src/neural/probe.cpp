#include "dstlab/neural/probe.hpp"

#include <algorithm>
#include <cmath>

#include "dstlab/log.hpp"

namespace dstlab::neural {

std::vector<int> probe_head_sizes() {
  std::vector<int> sizes;
  for (const auto& s : synthetic_ontology()) sizes.push_back(static_cast<int>(s.values.size()) + 1);
  return sizes;
}

std::vector<Example> probe_examples(const std::vector<Dialogue>& corpus) {
  const auto& onto = synthetic_ontology();
  std::vector<Example> out;
  for (const auto& d : corpus) {
    for (int t : d.user_turn_indices()) {
      const auto delta = state_delta(d, t);
      if (delta.empty()) continue;
      const Turn& turn = d.turn(t);
      if (!turn.features) throw std::invalid_argument("probe: turn without features in " + d.id);
      Example ex;
      ex.frames = *turn.features;
      ex.labels.assign(onto.size(), 0);
      ex.scored.assign(onto.size(), 0);
      for (const auto& [key, value] : delta) {
        auto it = std::find_if(onto.begin(), onto.end(), [&](const SynthSlot& s) { return s.key == key; });
        if (it == onto.end()) throw std::invalid_argument("probe: slot outside the synthetic ontology: " + key.str());
        const auto s = static_cast<std::size_t>(it - onto.begin());
        auto v = std::find(it->values.begin(), it->values.end(), value);
        if (v == it->values.end()) throw std::invalid_argument("probe: unknown value " + value);
        ex.labels[s] = static_cast<int>(v - it->values.begin()) + 1;
        ex.scored[s] = 1;
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

ModelConfig probe_model_config(const ProbeConfig& cfg, int feature_dim, int n_queries) {
  ModelConfig m;
  m.feature_dim = feature_dim;
  m.stride = cfg.stride;
  m.use_connector = cfg.use_connector;
  m.connector.d_in = cfg.d_model;
  m.connector.d_model = cfg.d_model;
  m.connector.n_heads = cfg.n_heads;
  m.connector.seed = combine64(cfg.model_seed, 2);
  m.compressor.d_model = cfg.d_model;
  m.compressor.n_heads = cfg.n_heads;
  m.compressor.n_queries = n_queries;
  m.compressor.seed = combine64(cfg.model_seed, 3);
  m.encoder_seed = combine64(cfg.model_seed, 1);
  m.readout_seed = combine64(cfg.model_seed, 4);
  m.head_sizes = probe_head_sizes();
  m.readout = ReadoutKind::QueryPooled;
  return m;
}

ParameterMask probe_mask(const ProbeConfig& cfg) {
  ParameterMask mask;
  mask.encoder_stub = false;
  mask.connector = cfg.use_connector && cfg.train_connector;
  mask.compressor = true;
  mask.readout = true;
  return mask;
}

std::map<int, ProbeResult> probe_retention(const std::vector<Dialogue>& corpus,
                                           const std::vector<int>& n_queries_list,
                                           const ProbeConfig& cfg) {
  std::map<int, ProbeResult> out;
  if (n_queries_list.empty()) return out;

  const auto examples = probe_examples(corpus);
  if (examples.size() < 2) throw std::invalid_argument("probe: need at least two examples");
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(examples.size()))),
      1, examples.size() - 1);
  const std::vector<Example> train_set(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<Example> heldout(examples.begin() + static_cast<std::ptrdiff_t>(n_train), examples.end());
  const int feature_dim = static_cast<int>(examples.front().frames.cols());

  TrainHyper hyper = cfg.hyper;
  hyper.seed = combine64(cfg.model_seed, 5);
  for (int n : n_queries_list) {
    ProbeModel model(probe_model_config(cfg, feature_dim, n));
    ProbeResult r;
    r.n_queries = n;
    r.loss_trace = train(model, probe_mask(cfg), train_set, hyper).loss_trace;
    r.train_accuracy = accuracy(model, train_set);
    r.heldout_accuracy = accuracy(model, heldout);
    r.n_train = train_set.size();
    r.n_heldout = heldout.size();
    log().info("probe N={} train_acc={:.4f} heldout_acc={:.4f}", n, r.train_accuracy, r.heldout_accuracy);
    out[n] = std::move(r);
  }
  return out;
}

}  // namespace dstlab::neural
