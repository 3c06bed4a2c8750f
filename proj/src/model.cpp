// Copyright 2026 The Respira Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "respira/model.hpp"

#include <cmath>
#include <sstream>

#include "respira/error.hpp"
#include "respira/random.hpp"

namespace respira {

int ModelConfig::freq_after(int blocks) const { return n_mels_in >> blocks; }

int ModelConfig::attention_width() const {
  switch (placement) {
    case Placement::kNone: return 0;
    case Placement::kInput: return n_mels_in;
    case Placement::kAfterBlock:
      if (placement_block < 1 || placement_block > n_conv_blocks()) return 0;
      return channels[placement_block - 1] * freq_after(placement_block);
    case Placement::kAfterAggregation: return d();
  }
  return 0;
}

void ModelConfig::validate() const {
  if (channels.empty()) throw ConfigError("model needs at least one conv block");
  for (int c : channels)
    if (c < 1) throw ConfigError("channel counts must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd and positive");
  if (n_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (freq_after(n_conv_blocks()) < 1) {
    throw ConfigError("n_mels_in=" + std::to_string(n_mels_in) + " does not survive " +
                      std::to_string(n_conv_blocks()) + " pooling stages");
  }
  if (placement == Placement::kAfterBlock && (placement_block < 1 || placement_block > n_conv_blocks())) {
    throw ConfigError("placement block " + std::to_string(placement_block) + " outside 1.." +
                      std::to_string(n_conv_blocks()));
  }
  if (placement != Placement::kNone) {
    const int w = attention_width();
    if (w < 8 || w % 8 != 0) {
      throw ConfigError("attention width " + std::to_string(w) + " must be a positive multiple of 8 (d_k = d/8)");
    }
  }
}

void ModelConfig::validate_paper() const {
  validate();
  if (n_conv_blocks() == 4 && d() != 512) throw ConfigError("4-block model must have d = 512");
  if (n_conv_blocks() == 3 && d() != 256) throw ConfigError("3-block model must have d = 256");
  if (n_conv_blocks() != 3 && n_conv_blocks() != 4) throw ConfigError("paper models have 3 or 4 conv blocks");
}

std::string ModelConfig::placement_name() const {
  switch (placement) {
    case Placement::kNone: return "none";
    case Placement::kInput: return "input";
    case Placement::kAfterBlock:
      return placement_block == n_conv_blocks() ? "after_last" : "after_block_" + std::to_string(placement_block);
    case Placement::kAfterAggregation: return "after_aggregation";
  }
  return "none";
}

void ModelConfig::set_placement(const std::string& name) {
  const std::string prefix = "after_block_";
  if (name == "none") {
    placement = Placement::kNone;
  } else if (name == "input") {
    placement = Placement::kInput;
  } else if (name == "after_aggregation") {
    placement = Placement::kAfterAggregation;
  } else if (name == "after_last") {
    placement = Placement::kAfterBlock;
    placement_block = n_conv_blocks();
  } else if (name.rfind(prefix, 0) == 0) {
    placement = Placement::kAfterBlock;
    try {
      placement_block = std::stoi(name.substr(prefix.size()));
    } catch (const std::exception&) {
      throw ConfigError("bad placement '" + name + "'");
    }
  } else {
    throw ConfigError("unknown placement '" + name +
                      "' (none, input, after_block_<k>, after_last, after_aggregation)");
  }
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "channels=";
  for (std::size_t i = 0; i < channels.size(); ++i) os << (i ? "," : "") << channels[i];
  os << ";kernel=" << kernel_size << ";classes=" << n_classes << ";placement=";
  // after_last is stored by block index so the string survives channel edits.
  if (placement == Placement::kAfterBlock) os << "after_block_" << placement_block;
  else os << placement_name();
  os << ";mels=" << n_mels_in;
  return os.str();
}

std::string ModelConfig::hash() const { return hex64(fnv1a64(canonical())); }

ModelConfig ModelConfig::parse(const std::string& canonical) {
  ModelConfig cfg;
  std::string placement = "after_aggregation";
  std::istringstream is(canonical);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed model config entry '" + item + "'");
    const auto key = item.substr(0, eq), value = item.substr(eq + 1);
    try {
      if (key == "channels") {
        cfg.channels.clear();
        std::istringstream cs(value);
        std::string c;
        while (std::getline(cs, c, ',')) cfg.channels.push_back(std::stoi(c));
      } else if (key == "kernel") {
        cfg.kernel_size = std::stoi(value);
      } else if (key == "classes") {
        cfg.n_classes = std::stoi(value);
      } else if (key == "placement") {
        placement = value;
      } else if (key == "mels") {
        cfg.n_mels_in = std::stoi(value);
      } else {
        throw ConfigError("unknown model config key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for model config key '" + key + "': " + value);
    }
  }
  cfg.set_placement(placement);
  cfg.validate();
  return cfg;
}

ModelConfig ModelConfig::icbhi(int n_classes) {
  ModelConfig cfg;
  cfg.channels = {64, 128, 256, 512};
  cfg.n_classes = n_classes;
  return cfg;
}

ModelConfig ModelConfig::sprsound(int n_classes) {
  ModelConfig cfg;
  cfg.channels = {64, 128, 256};
  cfg.n_classes = n_classes;
  return cfg;
}

template <typename T>
std::vector<std::pair<std::string, BasicTensor<T>>> ModelParams<T>::named() const {
  std::vector<std::pair<std::string, BasicTensor<T>>> out;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto b = std::to_string(i + 1);
    out.emplace_back("conv" + b + ".weight", conv[i]);
    out.emplace_back("bn" + b + ".gamma", gamma[i]);
    out.emplace_back("bn" + b + ".beta", beta[i]);
  }
  if (wq.defined()) {
    out.emplace_back("tsa.wq", wq);
    out.emplace_back("tsa.wk", wk);
    out.emplace_back("tsa.wv", wv);
  }
  out.emplace_back("head.weight", head_w);
  out.emplace_back("head.bias", head_b);
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> ModelParams<T>::list() const {
  std::vector<BasicTensor<T>> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  auto c = [](const BasicTensor<T>& t) { return t.defined() ? t.template cast<U>() : BasicTensor<U>(); };
  ModelParams<U> out;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    out.conv.push_back(c(conv[i]));
    out.gamma.push_back(c(gamma[i]));
    out.beta.push_back(c(beta[i]));
  }
  out.wq = c(wq);
  out.wk = c(wk);
  out.wv = c(wv);
  out.head_w = c(head_w);
  out.head_b = c(head_b);
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::detached() const {
  ModelParams out;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    out.conv.push_back(conv[i].detach());
    out.gamma.push_back(gamma[i].detach());
    out.beta.push_back(beta[i].detach());
  }
  out.wq = wq.detach();
  out.wk = wk.detach();
  out.wv = wv.detach();
  out.head_w = head_w.detach();
  out.head_b = head_b.detach();
  return out;
}

namespace {

template <typename T>
BasicTensor<T> conv_block(const BasicTensor<T>& x, int i, const ModelConfig& cfg, const ModelParams<T>& p,
                          BnStats& stats, ops::NormMode mode, BasicTensor<T>* capture) {
  auto h = ops::conv2d(x, p.conv[i], 1, cfg.kernel_size / 2);
  h = ops::batchnorm2d(h, p.gamma[i], p.beta[i], stats[i], mode);
  h = ops::relu(h);
  if (capture) {
    auto leaf = h.detach();
    leaf.set_requires_grad(true);
    *capture = leaf;
    h = leaf;
  }
  if (h.dim(2) < 2 || h.dim(3) < 2) {
    throw ShapeError("block " + std::to_string(i + 1) + ": feature map " + shape_str(h.shape()) +
                     " is too small for 2x2 pooling");
  }
  return ops::pool2d(h, ops::PoolKind::kAvg, 2, 2);
}

void check_input(const Shape& s, const ModelConfig& cfg) {
  if (s.size() != 4 || s[1] != 1) throw ShapeError("model input must be [B,1,T,F], got " + shape_str(s));
  if (s[3] != cfg.n_mels_in) {
    throw ShapeError("model expects F = " + std::to_string(cfg.n_mels_in) + " mel rows, got " + shape_str(s));
  }
}

template <typename T>
BasicTensor<T> attend_over_time(const BasicTensor<T>& h, const ModelParams<T>& p, BasicTensor<T>* weights) {
  const auto b = h.dim(0), c = h.dim(1), t = h.dim(2), f = h.dim(3);
  auto seq = ops::reshape(ops::permute(h, {0, 2, 1, 3}), {b, t, c * f});
  auto att = temporal_self_attention(seq, p.wq, p.wk, p.wv);
  if (weights) *weights = att.weights;
  return ops::permute(ops::reshape(att.out, {b, t, c, f}), {0, 2, 1, 3});
}

}  // namespace

template <typename T>
BasicTensor<T> backbone_forward(const BasicTensor<T>& x, const ModelConfig& cfg, const ModelParams<T>& p,
                                BnStats& stats, ops::NormMode mode) {
  check_input(x.shape(), cfg);
  auto h = x;
  for (int i = 0; i < cfg.n_conv_blocks(); ++i) h = conv_block<T>(h, i, cfg, p, stats, mode, nullptr);
  return h;
}

template <typename T>
BasicTensor<T> aggregate_frequency(const BasicTensor<T>& fm) {
  if (fm.ndim() != 4) throw ShapeError("aggregate_frequency expects [B,C,T,F], got " + shape_str(fm.shape()));
  auto sum = ops::add(ops::reduce(fm, ops::ReduceKind::kMean, 3), ops::reduce(fm, ops::ReduceKind::kMax, 3));
  return ops::permute(sum, {0, 2, 1});
}

template <typename T>
AttentionResult<T> temporal_self_attention(const BasicTensor<T>& x, const BasicTensor<T>& wq,
                                           const BasicTensor<T>& wk, const BasicTensor<T>& wv) {
  if (x.ndim() != 3) throw ShapeError("attention input must be [B,T,d], got " + shape_str(x.shape()));
  const auto d = x.dim(2);
  if (wq.ndim() != 2 || wk.ndim() != 2 || wv.ndim() != 2 || wq.dim(0) != d || wk.dim(0) != d || wv.dim(0) != d ||
      wq.dim(1) != wk.dim(1) || wv.dim(1) != d) {
    throw ShapeError("attention projections " + shape_str(wq.shape()) + ", " + shape_str(wk.shape()) + ", " +
                     shape_str(wv.shape()) + " do not fit input " + shape_str(x.shape()));
  }
  const auto dk = wq.dim(1);
  auto q = ops::matmul(x, wq);
  auto k = ops::matmul(x, wk);
  auto v = ops::matmul(x, wv);
  auto scores = ops::scale(ops::matmul(q, ops::transpose_last(k)), 1.0 / std::sqrt(static_cast<double>(dk)));
  auto weights = ops::softmax(scores, -1);
  return {ops::matmul(weights, v), weights};
}

template <typename T>
BasicTensor<T> classify_head(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b) {
  if (x.ndim() != 3) throw ShapeError("classify_head expects [B,T,d], got " + shape_str(x.shape()));
  return ops::add_bias(ops::matmul(ops::reduce(x, ops::ReduceKind::kMean, 1), w), b);
}

template <typename T>
ForwardResult<T> forward(const BasicTensor<T>& x, const ModelConfig& cfg, const ModelParams<T>& p, BnStats& stats,
                         ops::NormMode mode, bool capture_last_conv) {
  check_input(x.shape(), cfg);
  if (static_cast<int>(stats.size()) != cfg.n_conv_blocks()) throw ConfigError("batchnorm statistics missing");
  ForwardResult<T> res;
  auto h = x;
  if (cfg.placement == Placement::kInput) h = attend_over_time(h, p, &res.attention);
  for (int i = 0; i < cfg.n_conv_blocks(); ++i) {
    const bool last = i + 1 == cfg.n_conv_blocks();
    h = conv_block(h, i, cfg, p, stats, mode, last && capture_last_conv ? &res.last_conv : nullptr);
    if (cfg.placement == Placement::kAfterBlock && cfg.placement_block == i + 1) {
      h = attend_over_time(h, p, &res.attention);
    }
  }
  auto seq = aggregate_frequency(h);
  if (cfg.placement == Placement::kAfterAggregation) {
    auto att = temporal_self_attention(seq, p.wq, p.wk, p.wv);
    seq = att.out;
    res.attention = att.weights;
  }
  res.logits = classify_head(seq, p.head_w, p.head_b);
  return res;
}

double FlopsReport::total() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.flops;
  return s;
}

double FlopsReport::conv() const {
  double s = 0.0;
  for (const auto& l : layers)
    if (l.name.rfind("conv", 0) == 0) s += l.flops;
  return s;
}

double FlopsReport::attention() const {
  double s = 0.0;
  for (const auto& l : layers)
    if (l.name.rfind("tsa", 0) == 0) s += l.flops;
  return s;
}

FlopsReport count_flops(const ModelConfig& cfg, std::int64_t frames) {
  cfg.validate();
  FlopsReport r;
  auto attention = [&](double t, double w) {
    const double dk = w / 8.0;
    r.layers.push_back({"tsa.q", 2.0 * t * w * dk});
    r.layers.push_back({"tsa.k", 2.0 * t * w * dk});
    r.layers.push_back({"tsa.v", 2.0 * t * w * w});
    r.layers.push_back({"tsa.scores", 2.0 * t * t * dk});
    r.layers.push_back({"tsa.context", 2.0 * t * t * w});
  };
  if (cfg.placement == Placement::kInput) attention(static_cast<double>(frames), cfg.attention_width());
  int c_in = 1;
  const double k2 = static_cast<double>(cfg.kernel_size) * cfg.kernel_size;
  for (int i = 0; i < cfg.n_conv_blocks(); ++i) {
    const double h = static_cast<double>(frames >> i), w = static_cast<double>(cfg.freq_after(i));
    r.layers.push_back({"conv" + std::to_string(i + 1), 2.0 * cfg.channels[i] * c_in * k2 * h * w});
    c_in = cfg.channels[i];
    if (cfg.placement == Placement::kAfterBlock && cfg.placement_block == i + 1) {
      attention(static_cast<double>(frames >> (i + 1)), cfg.attention_width());
    }
  }
  if (cfg.placement == Placement::kAfterAggregation) {
    attention(static_cast<double>(frames >> cfg.n_conv_blocks()), cfg.d());
  }
  r.layers.push_back({"head", 2.0 * cfg.d() * cfg.n_classes});
  return r;
}

std::int64_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  std::int64_t n = 0, c_in = 1;
  for (int c : cfg.channels) {
    n += static_cast<std::int64_t>(c) * c_in * cfg.kernel_size * cfg.kernel_size + 2 * c;
    c_in = c;
  }
  if (cfg.placement != Placement::kNone) {
    const std::int64_t w = cfg.attention_width();
    n += 2 * w * (w / 8) + w * w;
  }
  return n + static_cast<std::int64_t>(cfg.d()) * cfg.n_classes + cfg.n_classes;
}

CnnTsa::CnnTsa(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  auto uniform = [&](Shape shape, double bound) {
    std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
    return Tensor::from(std::move(shape), std::move(v));
  };
  int c_in = 1;
  const int k = cfg_.kernel_size;
  for (int c : cfg_.channels) {
    const double fan_in = static_cast<double>(c_in) * k * k;
    params_.conv.push_back(uniform({c, c_in, k, k}, std::sqrt(6.0 / fan_in)));
    params_.gamma.push_back(Tensor::full({c}, 1.0f));
    params_.beta.push_back(Tensor::zeros({c}));
    stats_.emplace_back(static_cast<std::size_t>(c));
    c_in = c;
  }
  if (cfg_.placement != Placement::kNone) {
    const int w = cfg_.attention_width();
    const double bound = std::sqrt(3.0 / w);
    params_.wq = uniform({w, w / 8}, bound);
    params_.wk = uniform({w, w / 8}, bound);
    params_.wv = uniform({w, w}, bound);
  }
  params_.head_w = uniform({cfg_.d(), cfg_.n_classes}, std::sqrt(3.0 / cfg_.d()));
  params_.head_b = Tensor::zeros({cfg_.n_classes});
  for (auto& t : params_.list()) t.set_requires_grad(true);
}

Tensor CnnTsa::logits(const Tensor& x, ops::NormMode mode) {
  return forward(x, cfg_, params_, stats_, mode).logits;
}

ForwardResult<float> CnnTsa::frozen_forward(const Tensor& x, bool capture_last_conv) const {
  auto stats = stats_;
  return forward(x, cfg_, params_.detached(), stats, ops::NormMode::kEval, capture_last_conv);
}

std::int64_t CnnTsa::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : params_.list()) n += t.numel();
  return n;
}

CnnTsa CnnTsa::clone() const { return from_checkpoint(to_checkpoint()); }

Checkpoint CnnTsa::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.metadata["model.config"] = cfg_.canonical();
  ckpt.metadata["model.config_hash"] = cfg_.hash();
  for (const auto& [name, t] : params_.named()) ckpt.tensors.push_back({name, t.clone()});
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    const auto b = std::to_string(i + 1);
    const auto c = static_cast<std::int64_t>(stats_[i].mean.size());
    ckpt.tensors.push_back({"bn" + b + ".running_mean", Tensor::from({c}, stats_[i].mean)});
    ckpt.tensors.push_back({"bn" + b + ".running_var", Tensor::from({c}, stats_[i].var)});
  }
  return ckpt;
}

CnnTsa CnnTsa::from_checkpoint(const Checkpoint& ckpt) {
  const auto it = ckpt.metadata.find("model.config");
  if (it == ckpt.metadata.end()) throw DataError("checkpoint has no model.config entry");
  const auto cfg = ModelConfig::parse(it->second);
  const auto h = ckpt.metadata.find("model.config_hash");
  if (h != ckpt.metadata.end() && h->second != cfg.hash()) {
    throw DataError("checkpoint config hash " + h->second + " does not match its config (" + cfg.hash() + ")");
  }
  CnnTsa model(cfg, 0);
  const auto expected = static_cast<int>(model.params_.named().size() + 2 * model.stats_.size());
  if (model.import_weights(ckpt) != expected) throw DataError("checkpoint is missing tensors for its config");
  return model;
}

void CnnTsa::save(const std::string& path) const { save_checkpoint(path, to_checkpoint()); }

CnnTsa CnnTsa::load(const std::string& path, const std::string& expected_hash) {
  auto ckpt = load_checkpoint(path);
  const auto h = ckpt.metadata.find("model.config_hash");
  if (!expected_hash.empty() && (h == ckpt.metadata.end() || h->second != expected_hash)) {
    throw ConfigError("checkpoint " + path + " was trained with model config hash " +
                      (h == ckpt.metadata.end() ? std::string("<none>") : h->second) + ", expected " + expected_hash);
  }
  return from_checkpoint(ckpt);
}

int CnnTsa::import_weights(const Checkpoint& source) {
  int imported = 0;
  auto copy_into = [&](const std::string& name, std::span<float> dst, const Shape& shape) {
    const Tensor* src = source.find(name);
    if (!src || src->shape() != shape) return;
    std::copy(src->data().begin(), src->data().end(), dst.begin());
    ++imported;
  };
  for (auto& [name, t] : params_.named()) {
    auto handle = t;
    copy_into(name, handle.mutable_data(), t.shape());
  }
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    const auto b = std::to_string(i + 1);
    const Shape s{static_cast<std::int64_t>(stats_[i].mean.size())};
    copy_into("bn" + b + ".running_mean", stats_[i].mean, s);
    copy_into("bn" + b + ".running_var", stats_[i].var, s);
  }
  return imported;
}

#define RESPIRA_INSTANTIATE_MODEL(T)                                                                          \
  template struct ModelParams<T>;                                                                             \
  template BasicTensor<T> backbone_forward(const BasicTensor<T>&, const ModelConfig&, const ModelParams<T>&,  \
                                           BnStats&, ops::NormMode);                                          \
  template BasicTensor<T> aggregate_frequency(const BasicTensor<T>&);                                         \
  template AttentionResult<T> temporal_self_attention(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                                      const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> classify_head(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&); \
  template ForwardResult<T> forward(const BasicTensor<T>&, const ModelConfig&, const ModelParams<T>&,         \
                                    BnStats&, ops::NormMode, bool);

RESPIRA_INSTANTIATE_MODEL(float)
RESPIRA_INSTANTIATE_MODEL(double)
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;

}  // namespace respira
