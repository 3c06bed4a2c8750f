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

#include "respira/attribution.hpp"

#include <algorithm>
#include <sstream>

#include "respira/binary_io.hpp"
#include "respira/error.hpp"

namespace respira {

namespace {
constexpr const char* kMagic = "RSPRATTR";

Tensor class_weights(std::int64_t batch, std::int64_t n_classes, std::span<const int> class_ids) {
  std::vector<float> w(static_cast<std::size_t>(batch * n_classes), 0.0f);
  for (std::int64_t b = 0; b < batch; ++b) {
    const int c = class_ids[static_cast<std::size_t>(b)];
    if (c < 0 || c >= n_classes) {
      throw ConfigError("class " + std::to_string(c) + " outside 0.." + std::to_string(n_classes - 1));
    }
    w[static_cast<std::size_t>(b * n_classes + c)] = 1.0f;
  }
  return Tensor::from({batch, n_classes}, std::move(w));
}
}  // namespace

std::string attribution_method_name(AttributionMethod m) {
  return m == AttributionMethod::kGradCam ? "gradcam" : "ig";
}

AttributionMethod parse_attribution_method(const std::string& name) {
  if (name == "gradcam") return AttributionMethod::kGradCam;
  if (name == "ig" || name == "integrated_gradients") return AttributionMethod::kIntegratedGradients;
  throw ConfigError("unknown attribution method '" + name + "' (gradcam, ig)");
}

Tensor to_batch(std::span<const Spectrogram* const> specs) {
  if (specs.empty()) throw ShapeError("empty batch");
  const auto t = specs[0]->frames, f = specs[0]->bands;
  std::vector<float> v;
  v.reserve(static_cast<std::size_t>(specs.size() * t * f));
  for (const auto* s : specs) {
    if (s->frames != t || s->bands != f) {
      throw ShapeError("spectrogram " + s->id + " is " + std::to_string(s->frames) + "x" + std::to_string(s->bands) +
                       ", batch expects " + std::to_string(t) + "x" + std::to_string(f));
    }
    v.insert(v.end(), s->values.begin(), s->values.end());
  }
  return Tensor::from({static_cast<std::int64_t>(specs.size()), 1, t, f}, std::move(v));
}

Tensor to_batch(const Spectrogram& spec) {
  const Spectrogram* p = &spec;
  return to_batch(std::span<const Spectrogram* const>(&p, 1));
}

std::vector<float> bilinear_resize(std::span<const float> src, std::int64_t h, std::int64_t w, std::int64_t out_h,
                                   std::int64_t out_w) {
  if (h < 1 || w < 1 || out_h < 1 || out_w < 1 || static_cast<std::int64_t>(src.size()) != h * w) {
    throw ShapeError("bilinear_resize: bad geometry");
  }
  auto coord = [](std::int64_t i, std::int64_t in, std::int64_t out, std::int64_t& lo, std::int64_t& hi,
                  double& frac) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::int64_t>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - static_cast<double>(lo);
  };
  std::vector<float> out(static_cast<std::size_t>(out_h * out_w));
  for (std::int64_t i = 0; i < out_h; ++i) {
    std::int64_t y0, y1;
    double fy;
    coord(i, h, out_h, y0, y1, fy);
    for (std::int64_t j = 0; j < out_w; ++j) {
      std::int64_t x0, x1;
      double fx;
      coord(j, w, out_w, x0, x1, fx);
      const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      const double bottom = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      out[static_cast<std::size_t>(i * out_w + j)] = static_cast<float>(top * (1 - fy) + bottom * fy);
    }
  }
  return out;
}

std::vector<float> gradcam_combine(std::span<const float> maps, std::span<const float> grads, std::int64_t channels,
                                   std::int64_t h, std::int64_t w) {
  const auto plane = h * w;
  if (static_cast<std::int64_t>(maps.size()) != channels * plane || grads.size() != maps.size()) {
    throw ShapeError("gradcam_combine: maps and gradients must both be [C,h,w]");
  }
  std::vector<double> acc(static_cast<std::size_t>(plane), 0.0);
  for (std::int64_t m = 0; m < channels; ++m) {
    double alpha = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) alpha += grads[m * plane + i];
    alpha /= static_cast<double>(plane);
    for (std::int64_t i = 0; i < plane; ++i) acc[i] += alpha * maps[m * plane + i];
  }
  return {acc.begin(), acc.end()};
}

std::vector<AttributionMap> gradcam_batch(const CnnTsa& model, std::span<const Spectrogram* const> specs,
                                          std::span<const int> class_ids) {
  if (specs.size() != class_ids.size()) throw ConfigError("gradcam_batch: one class per spectrogram");
  if (model.config().n_conv_blocks() < 1) throw ConfigError("gradcam needs a model with a conv layer");
  const Tensor x = to_batch(specs);
  auto res = model.frozen_forward(x, true);
  const auto b = x.dim(0);
  ops::weighted_sum(res.logits, class_weights(b, res.logits.dim(1), class_ids)).backward();
  const auto& fm = res.last_conv;
  const auto c = fm.dim(1), h = fm.dim(2), w = fm.dim(3);
  const auto per = c * h * w;
  const auto maps = fm.data();
  const auto grads = fm.grad();
  std::vector<AttributionMap> out;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto small = gradcam_combine(maps.subspan(i * per, per), grads.subspan(i * per, per), c, h, w);
    AttributionMap a;
    a.frames = x.dim(2);
    a.bands = x.dim(3);
    a.values = bilinear_resize(small, h, w, a.frames, a.bands);
    a.sample_id = specs[i]->id;
    a.class_id = class_ids[i];
    a.method = AttributionMethod::kGradCam;
    out.push_back(std::move(a));
  }
  return out;
}

AttributionMap gradcam(const CnnTsa& model, const Spectrogram& spec, int class_id) {
  const Spectrogram* p = &spec;
  return gradcam_batch(model, std::span<const Spectrogram* const>(&p, 1), std::span<const int>(&class_id, 1))[0];
}

ScoreFn model_scorer(const CnnTsa& model) {
  return [&model](const Tensor& x) { return model.frozen_forward(x, false).logits; };
}

AttributionMap integrated_gradients(const ScoreFn& score, const Spectrogram& spec, int class_id,
                                    const IgConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("integrated gradients needs steps >= 1, got " + std::to_string(cfg.steps));
  const auto n = static_cast<std::size_t>(spec.frames * spec.bands);
  std::vector<float> base(n, cfg.baseline);
  if (cfg.baseline_values) {
    if (cfg.baseline_values->size() != n) throw ShapeError("IG baseline does not match the spectrogram size");
    base = *cfg.baseline_values;
  }
  std::vector<double> diff(n), total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) diff[i] = static_cast<double>(spec.values[i]) - base[i];
  const int chunk = std::max(1, cfg.batch);
  for (int j0 = 1; j0 <= cfg.steps; j0 += chunk) {
    const int count = std::min(chunk, cfg.steps - j0 + 1);
    std::vector<float> v(n * static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k) {
      const double alpha = static_cast<double>(j0 + k) / cfg.steps;
      for (std::size_t i = 0; i < n; ++i) v[k * n + i] = static_cast<float>(base[i] + alpha * diff[i]);
    }
    Tensor x = Tensor::from({count, 1, spec.frames, spec.bands}, std::move(v), true);
    Tensor logits = score(x);
    if (logits.ndim() != 2 || logits.dim(0) != count) throw ShapeError("scorer must return [B,n_classes]");
    std::vector<int> ids(static_cast<std::size_t>(count), class_id);
    ops::weighted_sum(logits, class_weights(count, logits.dim(1), ids)).backward();
    const auto g = x.grad();
    if (g.empty()) continue;  // score independent of the input
    for (int k = 0; k < count; ++k)
      for (std::size_t i = 0; i < n; ++i) total[i] += g[k * n + i];
  }
  AttributionMap a;
  a.frames = spec.frames;
  a.bands = spec.bands;
  a.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.values[i] = static_cast<float>(diff[i] * total[i] / cfg.steps);
  a.sample_id = spec.id;
  a.class_id = class_id;
  a.method = AttributionMethod::kIntegratedGradients;
  return a;
}

AttributionMap integrated_gradients(const CnnTsa& model, const Spectrogram& spec, int class_id,
                                    const IgConfig& cfg) {
  return integrated_gradients(model_scorer(model), spec, class_id, cfg);
}

double class_score(const ScoreFn& score, const Spectrogram& spec, int class_id) {
  NoGradGuard guard;
  const Tensor logits = score(to_batch(spec));
  if (class_id < 0 || class_id >= logits.dim(1)) throw ConfigError("class out of range");
  return logits.at({0, class_id});
}

AttributionMap attribute(const CnnTsa& model, const Spectrogram& spec, int class_id, AttributionMethod method,
                         const IgConfig& ig) {
  return method == AttributionMethod::kGradCam ? gradcam(model, spec, class_id)
                                               : integrated_gradients(model, spec, class_id, ig);
}

std::vector<double> band_profile(const AttributionMap& map) {
  std::vector<double> out(static_cast<std::size_t>(map.bands), 0.0);
  if (map.frames == 0) return out;
  for (std::int64_t t = 0; t < map.frames; ++t)
    for (std::int64_t f = 0; f < map.bands; ++f) out[f] += map.at(t, f);
  for (auto& v : out) v /= static_cast<double>(map.frames);
  return out;
}

std::string heatmap_svg(const AttributionMap& map, int cell_px) {
  float peak = 0.0f;
  for (float v : map.values) peak = std::max(peak, std::abs(v));
  if (peak == 0.0f) peak = 1.0f;
  std::ostringstream os;
  const auto w = map.frames * cell_px, h = map.bands * cell_px;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\">\n";
  os << "<title>" << map.sample_id << " class " << map.class_id << ' ' << attribution_method_name(map.method)
     << "</title>\n";
  for (std::int64_t t = 0; t < map.frames; ++t) {
    for (std::int64_t f = 0; f < map.bands; ++f) {
      const float s = map.at(t, f) / peak;
      // white at zero, red positive, blue negative
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(s))));
      const int r = s >= 0 ? 255 : fade, g = fade, b = s >= 0 ? fade : 255;
      os << "<rect x=\"" << t * cell_px << "\" y=\"" << (map.bands - 1 - f) * cell_px << "\" width=\"" << cell_px
         << "\" height=\"" << cell_px << "\" fill=\"rgb(" << r << ',' << g << ',' << b << ")\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void save_attributions(const std::string& path, const std::vector<AttributionMap>& maps) {
  io::BinaryWriter w(path);
  w.bytes(kMagic, 8);
  w.u32(kAttributionDumpVersion);
  w.u64(maps.size());
  for (const auto& m : maps) {
    w.str(m.sample_id);
    w.i64(m.class_id);
    w.str(attribution_method_name(m.method));
    w.i64(m.frames);
    w.i64(m.bands);
    w.floats(m.values);
  }
  w.commit();
}

std::vector<AttributionMap> load_attributions(const std::string& path) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kAttributionDumpVersion) {
    throw DataError(path + ": unsupported attribution dump version " + std::to_string(version));
  }
  std::vector<AttributionMap> out;
  const auto n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    AttributionMap m;
    m.sample_id = r.str();
    m.class_id = static_cast<int>(r.i64());
    m.method = parse_attribution_method(r.str());
    m.frames = r.i64();
    m.bands = r.i64();
    m.values = r.floats();
    if (static_cast<std::int64_t>(m.values.size()) != m.frames * m.bands) {
      throw DataError(path + ": attribution " + m.sample_id + " has inconsistent dimensions");
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace respira
