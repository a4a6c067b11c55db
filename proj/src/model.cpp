#include "slicemem/model.hpp"

#include <cmath>
#include <set>

#include "slicemem/attention.hpp"
#include "slicemem/errors.hpp"
#include "slicemem/lora.hpp"
#include "slicemem/rng.hpp"

namespace slicemem {

using nlohmann::json;

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model must be a positive multiple of heads");
  }
  if (channels == 0 || mlp_hidden == 0 || decoder_hidden == 0) {
    throw ConfigError("channels, mlp_hidden and decoder_hidden must be positive");
  }
  if (lora_rank < 1 || lora_rank > d_model) {
    throw ConfigError("lora_rank must lie in [1, d_model]");
  }
  if (!(lora_alpha > 0.0)) throw ConfigError("lora_alpha must be positive");
}

json ModelConfig::to_json() const {
  return {{"image_size", image_size},         {"patch_size", patch_size},
          {"channels", channels},             {"d_model", d_model},
          {"heads", heads},                   {"encoder_blocks", encoder_blocks},
          {"mlp_hidden", mlp_hidden},         {"lora_rank", lora_rank},
          {"lora_alpha", lora_alpha},         {"K", memory_size},
          {"decoder_hidden", decoder_hidden}, {"estimate_distances", estimate_distances}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  ModelConfig c;
  bool alpha_given = false;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "image_size") c.image_size = value.get<std::size_t>();
      else if (key == "patch_size") c.patch_size = value.get<std::size_t>();
      else if (key == "channels") c.channels = value.get<std::size_t>();
      else if (key == "d_model") c.d_model = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "encoder_blocks") c.encoder_blocks = value.get<std::size_t>();
      else if (key == "mlp_hidden") c.mlp_hidden = value.get<std::size_t>();
      else if (key == "lora_rank") c.lora_rank = value.get<std::size_t>();
      else if (key == "lora_alpha") {
        c.lora_alpha = value.get<double>();
        alpha_given = true;
      } else if (key == "K") c.memory_size = value.get<std::size_t>();
      else if (key == "decoder_hidden") c.decoder_hidden = value.get<std::size_t>();
      else if (key == "estimate_distances") c.estimate_distances = value.get<bool>();
      else throw ConfigError("unknown model config key '" + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("model config key '" + key + "' has the wrong type");
    }
  }
  // Scale factor alpha / rank defaults to 1.
  if (!alpha_given) c.lora_alpha = static_cast<double>(c.lora_rank);
  c.validate();
  return c;
}

ModelConfig micro_model_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.d_model = 8;
  c.heads = 2;
  c.encoder_blocks = 1;
  c.mlp_hidden = 16;
  c.lora_rank = 2;
  c.lora_alpha = 2.0;
  c.decoder_hidden = 8;
  return c;
}

std::string parameter_group(const std::string& name) {
  if (name == "lambda") return "lambda";
  if (name.rfind("lora.", 0) == 0) return name.back() == 'A' ? "lora_A" : "lora_B";
  if (name.rfind("decoder.", 0) == 0) return "decoder";
  return "encoder";
}

namespace {

const char* const kProjections[] = {"q", "k", "v", "o"};
const char* const kAdapted[] = {"q", "v"};

std::string block_prefix(std::size_t b) { return "encoder." + std::to_string(b); }

bool is_frozen(const std::string& name) {
  return name.find(".attn.") != std::string::npos;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config_ = config;
  Rng rng = Rng::substream(seed, "init");
  const std::size_t d = config.d_model;
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  auto& t = p.tensors_;

  t["patch_embed.weight"] = rng.normal_tensor({d, config.patch_dim()}, fan_in(config.patch_dim()));
  t["patch_embed.bias"] = Tensor({d});
  t["pos_embed"] = rng.normal_tensor({config.num_patches(), d}, 0.02);

  for (std::size_t b = 0; b < config.encoder_blocks; ++b) {
    const std::string pre = block_prefix(b);
    for (const char* proj : kProjections) {
      t[pre + ".attn." + proj + ".weight"] = rng.normal_tensor({d, d}, fan_in(d));
    }
    for (const char* proj : kAdapted) {
      const std::string lp = "lora." + std::to_string(b) + "." + proj;
      init_lora_factors(t[lp + ".A"], t[lp + ".B"], d, d, config.lora_rank, rng);
    }
    t[pre + ".ln1.gain"] = Tensor({d}, 1.0);
    t[pre + ".ln1.bias"] = Tensor({d});
    t[pre + ".ln2.gain"] = Tensor({d}, 1.0);
    t[pre + ".ln2.bias"] = Tensor({d});
    t[pre + ".mlp.fc1.weight"] = rng.normal_tensor({config.mlp_hidden, d}, fan_in(d));
    t[pre + ".mlp.fc1.bias"] = Tensor({config.mlp_hidden});
    t[pre + ".mlp.fc2.weight"] = rng.normal_tensor({d, config.mlp_hidden}, fan_in(config.mlp_hidden));
    t[pre + ".mlp.fc2.bias"] = Tensor({d});
  }

  const std::size_t pixels = config.patch_size * config.patch_size;
  t["decoder.fc1.weight"] = rng.normal_tensor({config.decoder_hidden, d}, fan_in(d));
  t["decoder.fc1.bias"] = Tensor({config.decoder_hidden});
  t["decoder.fc2.weight"] =
      rng.normal_tensor({pixels, config.decoder_hidden}, fan_in(config.decoder_hidden));
  t["decoder.fc2.bias"] = Tensor({pixels});
  t["lambda"] = make_lambda();

  for (auto& [name, tensor] : t) tensor.set_requires_grad(!is_frozen(name));
  return p;
}

Tensor& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("no parameter named " + name);
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw ContractError("no parameter named " + name);
  return it->second;
}

std::vector<std::string> ModelParams::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, tensor] : tensors_) {
    if (tensor.requires_grad()) out.push_back(name);
  }
  return out;
}

std::vector<std::string> ModelParams::frozen_names() const {
  std::vector<std::string> out;
  for (const auto& [name, tensor] : tensors_) {
    if (!tensor.requires_grad()) out.push_back(name);
  }
  return out;
}

void ModelParams::zero_grad() {
  for (auto& [name, tensor] : tensors_) tensor.zero_grad();
}

CheckpointData ModelParams::to_checkpoint() const {
  CheckpointData data;
  data.config = {{"model", config_.to_json()}};
  for (const auto& [name, tensor] : tensors_) {
    data.tensors.push_back({name, Tensor(tensor.shape(), {tensor.data().begin(), tensor.data().end()})});
  }
  return data;
}

ModelParams ModelParams::from_checkpoint(const CheckpointData& data) {
  if (!data.config.contains("model")) throw ConfigError("checkpoint has no model config");
  ModelParams p = init(ModelConfig::from_json(data.config.at("model")), 0);
  std::set<std::string> loaded;
  for (const auto& nt : data.tensors) {
    auto it = p.tensors_.find(nt.name);
    if (it == p.tensors_.end()) throw ConfigError("checkpoint tensor " + nt.name + " is not a model parameter");
    if (it->second.shape() != nt.tensor.shape()) {
      throw ConfigError("checkpoint tensor " + nt.name + " has shape " + shape_str(nt.tensor.shape()) +
                        ", model expects " + shape_str(it->second.shape()));
    }
    std::copy(nt.tensor.data().begin(), nt.tensor.data().end(), it->second.data().begin());
    loaded.insert(nt.name);
  }
  for (const auto& [name, tensor] : p.tensors_) {
    if (!loaded.count(name)) throw ConfigError("checkpoint is missing parameter " + name);
  }
  return p;
}

Var BoundParams::operator()(const std::string& name) {
  auto it = leaves_.find(name);
  if (it != leaves_.end()) return it->second;
  Var v = graph_.leaf(params_.at(name));
  leaves_.emplace(name, v);
  return v;
}

Tensor extract_patches(const Tensor& image, const ModelConfig& config) {
  const Shape expected{config.image_size, config.image_size, config.channels};
  if (image.shape() != expected) {
    throw DimensionError("image " + shape_str(image.shape()) + " does not match model input " +
                         shape_str(expected));
  }
  const std::size_t p = config.patch_size, g = config.grid(), c = config.channels;
  const std::size_t w = config.image_size;
  Tensor out({config.num_patches(), config.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      const std::size_t row = gy * g + gx;
      std::size_t col = 0;
      for (std::size_t py = 0; py < p; ++py) {
        for (std::size_t px = 0; px < p; ++px) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            out.at(row, col++) = image[((gy * p + py) * w + gx * p + px) * c + ch];
          }
        }
      }
    }
  }
  return out;
}

namespace {

Var linear(BoundParams& params, Var x, const std::string& prefix) {
  return add_row(matmul(x, transpose(params(prefix + ".weight"))), params(prefix + ".bias"));
}

Var affine_norm(BoundParams& params, Var x, const std::string& prefix) {
  return add_row(mul_row(layer_norm_rows(x), params(prefix + ".gain")), params(prefix + ".bias"));
}

Var encoder_block(BoundParams& params, Var x, std::size_t b) {
  const ModelConfig& c = params.config();
  const std::string pre = block_prefix(b);
  const std::string lora = "lora." + std::to_string(b);
  const double s = c.lora_alpha / static_cast<double>(c.lora_rank);

  const Var q = lora_forward(x, params(pre + ".attn.q.weight"), params(lora + ".q.A"),
                             params(lora + ".q.B"), s);
  const Var k = matmul(x, transpose(params(pre + ".attn.k.weight")));
  const Var v = lora_forward(x, params(pre + ".attn.v.weight"), params(lora + ".v.A"),
                             params(lora + ".v.B"), s);

  const std::size_t dh = c.d_model / c.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> heads;
  for (std::size_t h = 0; h < c.heads; ++h) {
    const Var qh = slice_cols(q, h * dh, dh);
    const Var kh = slice_cols(k, h * dh, dh);
    const Var vh = slice_cols(v, h * dh, dh);
    const Var attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    heads.push_back(matmul(attn, vh));
  }
  const Var attended = matmul(concat_cols(heads), transpose(params(pre + ".attn.o.weight")));
  x = affine_norm(params, add(x, attended), pre + ".ln1");

  const Var hidden = gelu(linear(params, x, pre + ".mlp.fc1"));
  return affine_norm(params, add(x, linear(params, hidden, pre + ".mlp.fc2")), pre + ".ln2");
}

std::vector<std::size_t> reassembly_map(const ModelConfig& c) {
  const std::size_t p = c.patch_size, g = c.grid(), w = c.image_size;
  std::vector<std::size_t> source(w * w);
  for (std::size_t y = 0; y < w; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t patch = (y / p) * g + x / p;
      source[y * w + x] = patch * p * p + (y % p) * p + x % p;
    }
  }
  return source;
}

}  // namespace

EncodedSlice encode_slice(BoundParams& params, const Tensor& image) {
  const ModelConfig& c = params.config();
  const Var patches = params.graph().constant(extract_patches(image, c));
  Var x = add(linear(params, patches, "patch_embed"), params("pos_embed"));
  for (std::size_t b = 0; b < c.encoder_blocks; ++b) x = encoder_block(params, x, b);
  return {x, mean_rows(x)};
}

Var decode_mask(BoundParams& params, Var fused_features) {
  const ModelConfig& c = params.config();
  if (fused_features.shape() != Shape{c.num_patches(), c.d_model}) {
    throw DimensionError("decode_mask: features " + shape_str(fused_features.shape()) +
                         " do not match " + shape_str({c.num_patches(), c.d_model}));
  }
  const Var hidden = gelu(linear(params, fused_features, "decoder.fc1"));
  const Var per_patch = linear(params, hidden, "decoder.fc2");
  return gather(per_patch, reassembly_map(c), {c.image_size, c.image_size});
}

SequenceOutput forward_sequence(BoundParams& params, const SliceSequence& seq) {
  const ModelConfig& c = params.config();
  if (seq.slices.empty()) throw ContractError("forward_sequence: empty sequence");
  seq.validate();
  const bool use_z = seq.has_z_positions();
  if (!use_z && !c.estimate_distances && c.memory_size > 0 && seq.slices.size() > 1) {
    throw ConfigError("sequence " + seq.sequence_id +
                      " has no z positions and distance estimation is disabled");
  }
  Graph& g = params.graph();
  const Var lambda = params("lambda");

  SequenceOutput out;
  for (std::size_t t = 0; t < seq.slices.size(); ++t) {
    const Slice& slice = seq.slices[t];
    const EncodedSlice enc = encode_slice(params, slice.image);

    SliceOutput so;
    so.pooled = enc.pooled;
    so.patch_features = enc.patch_features;

    std::vector<Var> memory_pooled, memory_patches;
    if (c.memory_size > 0 && !out.bank.empty()) {
      const auto selected = select_memory(out.bank, enc.pooled.value().data(), c.memory_size);
      for (const MemoryEntry& m : selected) {
        so.memory.push_back(m.slice_index);
        memory_pooled.push_back(m.pooled_embedding);
        memory_patches.push_back(m.patch_features);
        if (use_z) {
          so.distances.push_back(std::abs(*slice.z_position_um - *m.z_position_um));
        } else {
          so.distances.push_back(
              estimate_distance(enc.pooled.value().data(), m.pooled_embedding.value().data()));
        }
      }
    }

    if (c.memory_size > 0) {
      so.attention_weights =
          cross_slice_weights(context_with_self(enc.pooled, memory_pooled, so.distances), lambda);
    } else {
      so.attention_weights = g.constant(Tensor::vector({1.0}));
    }
    so.fused = fuse_memory(enc.patch_features, memory_patches, so.attention_weights);
    so.logits = decode_mask(params, so.fused);
    so.probabilities = sigmoid(so.logits);
    so.confidence = prediction_confidence(so.probabilities.value());

    out.bank.insert({t, enc.pooled, enc.patch_features, so.confidence, slice.z_position_um});
    out.slices.push_back(std::move(so));
  }
  return out;
}

std::vector<SlicePrediction> predict_sequence(const ModelParams& params, const SliceSequence& seq) {
  ModelParams local = params;
  for (auto& [name, tensor] : local.tensors()) tensor.set_requires_grad(false);
  Graph g;
  BoundParams bound(g, local);
  const SequenceOutput result = forward_sequence(bound, seq);
  std::vector<SlicePrediction> out;
  out.reserve(result.slices.size());
  for (const SliceOutput& so : result.slices) {
    out.push_back({so.logits.value(), so.probabilities.value(), so.confidence, so.pooled.value()});
  }
  return out;
}

}  // namespace slicemem
