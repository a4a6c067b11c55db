#include "slicemem/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "slicemem/attention.hpp"
#include "slicemem/checkpoint.hpp"
#include "slicemem/errors.hpp"
#include "slicemem/rng.hpp"

namespace slicemem {

namespace fs = std::filesystem;
using nlohmann::json;

void adam_update(std::span<double> param, std::span<const double> grad, std::vector<double>& m,
                 std::vector<double>& v, std::size_t step, const AdamConfig& config) {
  if (grad.size() != param.size()) {
    throw ContractError("adam: gradient holds " + std::to_string(grad.size()) + " values for " +
                        std::to_string(param.size()) + " parameters");
  }
  if (m.empty()) m.assign(param.size(), 0.0);
  if (v.empty()) v.assign(param.size(), 0.0);
  if (m.size() != param.size() || v.size() != param.size()) {
    throw ContractError("adam: optimizer state does not match parameter size");
  }
  if (step < 1) throw ContractError("adam: step count starts at 1");
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    param[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

void adam_step(ModelParams& params, AdamState& state, const AdamConfig& config) {
  ++state.step;
  for (auto& [name, tensor] : params.tensors()) {
    if (!tensor.requires_grad()) continue;
    adam_update(tensor.data(), tensor.grad(), state.m[name], state.v[name], state.step, config);
  }
  if (params.contains("lambda")) clamp_lambda(params.at("lambda"));
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be at least 1");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  loss.validate();
  model.validate();
}

json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"learning_rate", adam.learning_rate},
          {"beta1", adam.beta1},
          {"beta2", adam.beta2},
          {"epsilon", adam.epsilon},
          {"seed", seed},
          {"K", model.memory_size},
          {"checkpoint_every", checkpoint_every},
          {"loss_weights",
           {{"w_dice", loss.w_dice},
            {"w_bce", loss.w_bce},
            {"w_consistency", loss.w_consistency},
            {"smooth", loss.smooth},
            {"tau", loss.tau}}},
          {"model", model.to_json()}};
}

namespace {

template <typename T>
T typed(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

LossWeights loss_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config key 'loss_weights' must be an object");
  LossWeights w;
  for (const auto& [key, value] : j.items()) {
    if (key == "w_dice") w.w_dice = typed<double>(value, key);
    else if (key == "w_bce") w.w_bce = typed<double>(value, key);
    else if (key == "w_consistency") w.w_consistency = typed<double>(value, key);
    else if (key == "smooth") w.smooth = typed<double>(value, key);
    else if (key == "tau") w.tau = typed<double>(value, key);
    else throw ConfigError("unknown config key 'loss_weights." + key + "'");
  }
  return w;
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") c.steps = typed<std::size_t>(value, key);
    else if (key == "learning_rate") c.adam.learning_rate = typed<double>(value, key);
    else if (key == "beta1") c.adam.beta1 = typed<double>(value, key);
    else if (key == "beta2") c.adam.beta2 = typed<double>(value, key);
    else if (key == "epsilon") c.adam.epsilon = typed<double>(value, key);
    else if (key == "seed") c.seed = typed<std::uint64_t>(value, key);
    else if (key == "checkpoint_every") c.checkpoint_every = typed<std::size_t>(value, key);
    else if (key == "loss_weights") c.loss = loss_from_json(value);
    else if (key == "model") continue;
    else if (key == "K") {
      const auto k = typed<std::size_t>(value, key);
      if (j.contains("model") && j["model"].contains("K") && j["model"]["K"] != value) {
        throw ConfigError("config key 'K' disagrees with 'model.K'");
      }
      c.model.memory_size = k;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return TrainConfig::from_json(j);
}

json TraceRecord::to_json() const {
  return {{"step", step}, {"sequence_id", sequence_id}, {"loss", loss},  {"dice", dice},
          {"bce", bce},   {"consistency", consistency}, {"lambda", lambda}};
}

TraceRecord accumulate_sequence_gradient(ModelParams& params, const SliceSequence& seq,
                                         const LossWeights& weights) {
  if (!seq.has_masks()) throw ConfigError("sequence " + seq.sequence_id + " lacks masks");
  Graph g;
  BoundParams bound(g, params);
  const SequenceOutput out = forward_sequence(bound, seq);
  std::vector<Var> probs;
  std::vector<Tensor> targets, embeddings;
  for (std::size_t t = 0; t < seq.slices.size(); ++t) {
    probs.push_back(out.slices[t].probabilities);
    targets.push_back(*seq.slices[t].mask);
    embeddings.push_back(out.slices[t].pooled.value());
  }
  const LossBreakdown loss = combined_loss(probs, targets, embeddings, weights);
  g.backward(loss.total);

  TraceRecord rec;
  rec.sequence_id = seq.sequence_id;
  rec.loss = loss.total.value()[0];
  rec.dice = loss.dice.value()[0];
  rec.bce = loss.bce.value()[0];
  rec.consistency = loss.consistency.value()[0];
  return rec;
}

TrainResult train(const TrainConfig& config, const std::vector<SliceSequence>& data,
                  const CheckpointHook& on_checkpoint) {
  config.validate();
  if (data.empty()) throw ConfigError("training dataset is empty");
  for (const auto& seq : data) {
    if (seq.slices.empty()) throw ConfigError("sequence " + seq.sequence_id + " is empty");
    if (!seq.has_masks()) throw ConfigError("sequence " + seq.sequence_id + " lacks masks");
  }

  TrainResult result{ModelParams::init(config.model, config.seed), {}};
  ModelParams& params = result.params;
  AdamState state;
  Rng order = Rng::substream(config.seed, "data-order");
  std::vector<std::size_t> perm;
  std::size_t cursor = 0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    if (cursor == perm.size()) {
      perm.resize(data.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[order.below(i)]);
      cursor = 0;
    }
    const SliceSequence& seq = data[perm[cursor++]];
    params.zero_grad();
    TraceRecord rec = accumulate_sequence_gradient(params, seq, config.loss);
    adam_step(params, state, config.adam);
    rec.step = step;
    rec.lambda = params.at("lambda")[0];
    result.trace.push_back(std::move(rec));
    if (on_checkpoint && config.checkpoint_every > 0 && step % config.checkpoint_every == 0) {
      on_checkpoint(step, params);
    }
  }
  params.zero_grad();
  return result;
}

void save_model(const fs::path& path, const ModelParams& params, const json& extra) {
  CheckpointData data = params.to_checkpoint();
  for (const auto& [key, value] : extra.items()) data.config[key] = value;
  write_checkpoint(path, data);
}

ModelParams load_model(const fs::path& path) {
  return ModelParams::from_checkpoint(read_checkpoint(path));
}

TrainResult train_to_files(const TrainConfig& config, const fs::path& data_dir,
                           const fs::path& out_ckpt) {
  const std::vector<SliceSequence> data = load_dataset(data_dir);
  const json extra = {{"train", config.to_json()}};
  TrainResult result = train(config, data, [&](std::size_t step, const ModelParams& p) {
    save_model(fs::path(out_ckpt.string() + ".step" + std::to_string(step)), p, extra);
  });
  save_model(out_ckpt, result.params, extra);

  std::ofstream trace(out_ckpt.string() + ".trace.jsonl", std::ios::trunc);
  if (!trace) throw IoError("cannot write loss trace next to " + out_ckpt.string());
  for (const auto& rec : result.trace) trace << rec.to_json().dump() << "\n";
  return result;
}

DiceSummary summarize(const std::vector<double>& values) {
  DiceSummary s;
  s.count = values.size();
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

namespace {

json summary_json(const DiceSummary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"sd", s.sd}};
}

}  // namespace

json EvalReport::to_json() const {
  json sequences = json::array();
  for (const SliceScore& s : slices) {
    if (sequences.empty() || sequences.back()["sequence_id"] != s.sequence_id) {
      sequences.push_back({{"sequence_id", s.sequence_id}, {"slices", json::array()}});
    }
    sequences.back()["slices"].push_back(
        {{"index", s.index}, {"dice", s.dice}, {"corrupted", s.corrupted}});
  }
  return {{"config", config},
          {"sequences", sequences},
          {"count", overall.count},
          {"mean", overall.mean},
          {"sd", overall.sd},
          {"corrupted", summary_json(corrupted)},
          {"clean", summary_json(clean)}};
}

EvalReport evaluate(const ModelParams& params, const std::vector<SliceSequence>& data) {
  EvalReport report;
  report.config = params.config().to_json();
  std::vector<double> all, bad, good;
  for (const SliceSequence& seq : data) {
    if (!seq.has_masks()) {
      throw EvaluationError("sequence " + seq.sequence_id + " has slices without masks");
    }
    const auto preds = predict_sequence(params, seq);
    for (std::size_t t = 0; t < preds.size(); ++t) {
      const Tensor mask = threshold_mask(preds[t].probabilities);
      const double dice = dice_score(mask, *seq.slices[t].mask);
      report.slices.push_back({seq.sequence_id, t, dice, seq.slices[t].corrupted});
      all.push_back(dice);
      (seq.slices[t].corrupted ? bad : good).push_back(dice);
    }
  }
  report.overall = summarize(all);
  report.corrupted = summarize(bad);
  report.clean = summarize(good);
  return report;
}

std::vector<Tensor> infer_masks(const ModelParams& params, const SliceSequence& seq) {
  std::vector<Tensor> out;
  for (const auto& p : predict_sequence(params, seq)) out.push_back(threshold_mask(p.probabilities));
  return out;
}

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

json GradCheckReport::to_json() const {
  json groups_json = json::array();
  for (const auto& g : groups) {
    groups_json.push_back({{"group", g.group},
                           {"checked", g.checked},
                           {"max_rel_error", g.max_rel_error},
                           {"max_abs_error", g.max_abs_error},
                           {"passed", g.passed}});
  }
  return {{"seed", seed}, {"h", step}, {"tolerance", tolerance}, {"groups", groups_json},
          {"passed", passed}};
}

namespace {

struct MicroProblem {
  ModelParams params;
  SliceSequence seq;
  LossWeights weights;
};

MicroProblem make_micro_problem(std::uint64_t seed) {
  MicroProblem prob{ModelParams::init(micro_model_config(), seed), {}, {}};
  // Every pair of slices joins the consistency term.
  prob.weights.tau = -0.99;
  Rng rng = Rng::substream(seed, "grad-check");
  // Move away from the zero-initialized LoRA B and unit gains so every
  // group has a non-trivial gradient.
  for (const std::string& name : prob.params.trainable_names()) {
    if (name == "lambda") continue;
    for (double& v : prob.params.at(name).data()) v += rng.normal(0.0, 0.2);
  }
  const ModelConfig& c = prob.params.config();
  prob.seq.sequence_id = "grad-check";
  const double depths[] = {0.0, 3.0};
  for (double z : depths) {
    Slice s;
    s.image = rng.uniform_tensor({c.image_size, c.image_size, c.channels}, 0.0, 1.0);
    Tensor mask({c.image_size, c.image_size});
    for (double& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    s.mask = std::move(mask);
    s.z_position_um = z;
    prob.seq.slices.push_back(std::move(s));
  }
  return prob;
}

std::vector<Tensor> pooled_embeddings(ModelParams& params, const SliceSequence& seq) {
  Graph g;
  BoundParams bound(g, params);
  std::vector<Tensor> out;
  for (const SliceOutput& so : forward_sequence(bound, seq).slices) out.push_back(so.pooled.value());
  return out;
}

// The consistency weights are detached, so the function being differentiated
// holds them at their unperturbed values.
double micro_loss(ModelParams& params, const SliceSequence& seq, const LossWeights& weights,
                  const std::vector<Tensor>& detached_embeddings) {
  Graph g;
  BoundParams bound(g, params);
  const SequenceOutput out = forward_sequence(bound, seq);
  std::vector<Var> probs;
  std::vector<Tensor> targets;
  for (std::size_t t = 0; t < seq.slices.size(); ++t) {
    probs.push_back(out.slices[t].probabilities);
    targets.push_back(*seq.slices[t].mask);
  }
  return combined_loss(probs, targets, detached_embeddings, weights).total.value()[0];
}

}  // namespace

GradCheckReport grad_check(std::uint64_t seed) {
  MicroProblem prob = make_micro_problem(seed);
  GradCheckReport report;
  report.seed = seed;

  prob.params.zero_grad();
  accumulate_sequence_gradient(prob.params, prob.seq, prob.weights);
  const std::vector<Tensor> embeddings = pooled_embeddings(prob.params, prob.seq);

  std::map<std::string, GroupCheck> groups;
  for (const char* name : {"encoder", "lora_A", "lora_B", "decoder", "lambda"}) {
    groups[name].group = name;
  }
  for (const std::string& name : prob.params.trainable_names()) {
    Tensor& tensor = prob.params.at(name);
    GroupCheck& gc = groups[parameter_group(name)];
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      const double original = tensor[i];
      tensor[i] = original + report.step;
      const double up = micro_loss(prob.params, prob.seq, prob.weights, embeddings);
      tensor[i] = original - report.step;
      const double down = micro_loss(prob.params, prob.seq, prob.weights, embeddings);
      tensor[i] = original;
      const double numeric = (up - down) / (2.0 * report.step);
      const double analytic = tensor.grad()[i];
      gc.max_rel_error = std::max(gc.max_rel_error, gradient_relative_error(analytic, numeric));
      gc.max_abs_error = std::max(gc.max_abs_error, std::abs(analytic - numeric));
      ++gc.checked;
    }
  }
  report.passed = true;
  for (auto& [name, gc] : groups) {
    gc.passed = gc.checked > 0 && gc.max_rel_error <= report.tolerance;
    report.passed = report.passed && gc.passed;
  }
  for (const char* name : {"encoder", "lora_A", "lora_B", "decoder", "lambda"}) {
    report.groups.push_back(groups[name]);
  }
  return report;
}

}  // namespace slicemem
