#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mbmd/diffcore.hpp"
#include "mbmd/eeg.hpp"
#include "mbmd/losses.hpp"

namespace mbmd {

enum class EnsembleMode { WaveletAttention, Average, GateNetwork };

inline std::string ensemble_mode_name(EnsembleMode m) {
  switch (m) {
    case EnsembleMode::WaveletAttention: return "wavelet_attention";
    case EnsembleMode::Average: return "average";
    case EnsembleMode::GateNetwork: return "gate_network";
  }
  return "wavelet_attention";
}

inline EnsembleMode ensemble_mode_from_name(const std::string& s) {
  if (s == "wavelet_attention") return EnsembleMode::WaveletAttention;
  if (s == "average") return EnsembleMode::Average;
  if (s == "gate_network") return EnsembleMode::GateNetwork;
  fail(ErrorKind::Config, "unknown ensemble mode: " + s);
}

struct ModelConfig {
  int num_blocks = 4;
  std::string block_pattern = "TMTM";  // T = traditional, M = multi-branch
  int patch_size = 64;
  int embed_dim = 128;
  int num_heads = 4;
  int ffn_hidden = 512;
  int num_branches = 6;
  int num_classes = 4;
  double dropout = 0.1;
  int channels = 1;
  int window_len = 512;

  int64_t tokens_per_window() const {
    return static_cast<int64_t>(channels) * (window_len / patch_size);
  }

  void validate() const {
    require(num_blocks >= 1, ErrorKind::Config, "num_blocks must be >= 1");
    require(static_cast<int>(block_pattern.size()) == num_blocks, ErrorKind::Config,
            "block_pattern length must equal num_blocks");
    for (char c : block_pattern)
      require(c == 'T' || c == 'M', ErrorKind::Config, "block_pattern may contain only T and M");
    require(embed_dim % num_heads == 0, ErrorKind::Config, "embed_dim must be divisible by num_heads");
    require(window_len % patch_size == 0, ErrorKind::Config, "window_len must be divisible by patch_size");
    require(num_branches >= 1 && num_classes >= 2 && channels >= 1, ErrorKind::Config,
            "invalid branch/class/channel count");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::Config, "dropout must be in [0,1)");
  }
};

/// Splits a C x L window into channel-major tokens: token t covers channel
/// floor(t / (L/P)) samples [(t mod L/P)*P, ...+P).
inline diff::Tensor<double> patchify(const SignalMatrix& window, int patch_size) {
  require(window.cols % patch_size == 0, ErrorKind::Data,
          "window length " + std::to_string(window.cols) + " not divisible by patch size");
  const int64_t per_ch = window.cols / patch_size;
  const int64_t tokens = window.rows * per_ch;
  diff::Tensor<double> out({tokens, patch_size});
  for (int64_t t = 0; t < tokens; ++t) {
    const int64_t ch = t / per_ch;
    const int64_t off = (t % per_ch) * patch_size;
    std::copy(window.row(ch) + off, window.row(ch) + off + patch_size,
              out.v.begin() + t * patch_size);
  }
  return out;
}

/// Forward-pass node handles for one batch.
template <typename T>
struct ForwardRefs {
  using Ref = typename diff::Tape<T>::Ref;
  Ref z_data = -1;                 // {n, K}
  std::vector<Ref> z_branch;       // B x {n, K}; empty without band streams
  Ref rep_raw = -1;                // {n, D}
  std::vector<Ref> rep_branch;     // B x {n, D}
  Ref gate_head = -1;              // {n, B} gate weights at the head site
};

template <typename T>
class Model {
 public:
  using Ref = typename diff::Tape<T>::Ref;

  ModelConfig cfg;
  EnsembleMode ensemble = EnsembleMode::WaveletAttention;
  diff::ParamStore<T> params;

  static Model init(const ModelConfig& cfg, EnsembleMode ensemble, uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    m.ensemble = ensemble;
    auto rng = make_rng(derive_seed(seed, 0x6d6f64656c));
    const int d = cfg.embed_dim;

    m.add_linear(rng, "embed", cfg.patch_size, d);
    m.add_normal(rng, "pos", {cfg.tokens_per_window(), d}, 0.02);
    for (int i = 0; i < cfg.num_blocks; ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      m.add_ln(p + "ln1", d);
      m.add_linear(rng, p + "attn.qkv", d, 3 * d);
      m.add_linear(rng, p + "attn.out", d, d);
      m.add_ln(p + "ln2", d);
      if (cfg.block_pattern[static_cast<size_t>(i)] == 'T') {
        m.add_linear(rng, p + "ffn.fc1", d, cfg.ffn_hidden);
        m.add_linear(rng, p + "ffn.fc2", cfg.ffn_hidden, d);
      } else {
        for (int b = 0; b < cfg.num_branches; ++b) {
          const std::string e = p + "expert" + std::to_string(b) + ".";
          m.add_linear(rng, e + "fc1", d, cfg.ffn_hidden);
          m.add_linear(rng, e + "fc2", cfg.ffn_hidden, d);
        }
      }
    }
    // equal branch weights at init
    m.params.add("wavelet_w", diff::Tensor<T>({cfg.num_branches}));
    for (int b = 0; b < cfg.num_branches; ++b) {
      m.add_linear(rng, "head" + std::to_string(b), d, cfg.num_classes);
    }
    if (ensemble == EnsembleMode::GateNetwork) {
      m.add_linear(rng, "gate.fc1", d, d / 2);
      // zero output layer -> uniform gate weights at init
      m.params.add("gate.fc2.W", diff::Tensor<T>({static_cast<int64_t>(d / 2), static_cast<int64_t>(cfg.num_branches)}));
      m.params.add("gate.fc2.b", diff::Tensor<T>({cfg.num_branches}));
    }
    return m;
  }

  /// Builds the forward graph for a batch. When `bands` is empty only the raw
  /// stream runs (the inference path); otherwise every band stream runs too
  /// and branch logits are produced.
  ForwardRefs<T> forward(diff::Tape<T>& tape, const std::vector<const EegWindow*>& batch,
                         const std::vector<const BandSet*>& bands) const {
    require(!batch.empty(), ErrorKind::Data, "empty batch");
    const bool with_bands = !bands.empty();
    if (with_bands) {
      require(bands.size() == batch.size(), ErrorKind::Data, "band cache missing for some windows");
    }
    const int64_t n = static_cast<int64_t>(batch.size());
    const int64_t seg = cfg.tokens_per_window();
    const int streams = 1 + (with_bands ? cfg.num_branches : 0);
    auto& ps = const_cast<diff::ParamStore<T>&>(params);

    // stack raw tokens, then one block of tokens per band stream
    diff::Tensor<T> stacked({streams * n * seg, cfg.patch_size});
    int64_t row = 0;
    auto emit = [&](const SignalMatrix& sig) {
      require(sig.rows == cfg.channels && sig.cols == cfg.window_len, ErrorKind::Data,
              "window shape does not match the model config");
      auto tok = patchify(sig, cfg.patch_size);
      for (int64_t i = 0; i < tok.numel(); ++i)
        stacked.v[static_cast<size_t>(row * cfg.patch_size + i)] = static_cast<T>(tok.v[static_cast<size_t>(i)]);
      row += tok.shape[0];
    };
    for (int64_t i = 0; i < n; ++i) emit(batch[static_cast<size_t>(i)]->samples);
    if (with_bands) {
      for (int b = 0; b < cfg.num_branches; ++b) {
        for (int64_t i = 0; i < n; ++i) {
          const auto& bs = *bands[static_cast<size_t>(i)];
          require(static_cast<int>(bs.signals.size()) == cfg.num_branches, ErrorKind::Data,
                  "band count does not match num_branches");
          emit(bs.signals[static_cast<size_t>(b)].second);
        }
      }
    }

    Ref x = tape.input(std::move(stacked));
    Ref h = tape.add(tape.matmul(x, tape.param(ps, "embed.W")), tape.param(ps, "embed.b"));
    h = tape.add(h, tape.repeat_rows(tape.param(ps, "pos"), streams * n));

    const std::vector<int64_t> stream_rows(static_cast<size_t>(streams), n * seg);
    for (int i = 0; i < cfg.num_blocks; ++i) {
      const std::string p = "block" + std::to_string(i) + ".";
      Ref normed1 = tape.layer_norm(h, tape.param(ps, p + "ln1.g"), tape.param(ps, p + "ln1.b"));
      Ref att = tape.attention(normed1, tape.param(ps, p + "attn.qkv.W"), tape.param(ps, p + "attn.qkv.b"),
                               tape.param(ps, p + "attn.out.W"), tape.param(ps, p + "attn.out.b"),
                               cfg.num_heads, seg, cfg.dropout);
      h = tape.add(h, att);
      Ref normed2 = tape.layer_norm(h, tape.param(ps, p + "ln2.g"), tape.param(ps, p + "ln2.b"));

      if (cfg.block_pattern[static_cast<size_t>(i)] == 'T') {
        Ref f = ffn(tape, ps, p + "ffn", normed2);
        h = tape.add(h, tape.dropout(f, cfg.dropout));
      } else {
        auto h_parts = tape.split_rows(h, stream_rows);
        auto n_parts = tape.split_rows(normed2, stream_rows);
        // expert b processes the raw slice plus (when training) band b's slice
        std::vector<Ref> expert_raw(static_cast<size_t>(cfg.num_branches));
        std::vector<Ref> expert_band(static_cast<size_t>(cfg.num_branches), -1);
        for (int b = 0; b < cfg.num_branches; ++b) {
          const std::string e = p + "expert" + std::to_string(b);
          if (with_bands) {
            Ref joint = tape.concat_rows({n_parts[0], n_parts[static_cast<size_t>(1 + b)]});
            Ref out = ffn(tape, ps, e, joint);
            auto halves = tape.split_rows(out, {n * seg, n * seg});
            expert_raw[static_cast<size_t>(b)] = halves[0];
            expert_band[static_cast<size_t>(b)] = halves[1];
          } else {
            expert_raw[static_cast<size_t>(b)] = ffn(tape, ps, e, n_parts[0]);
          }
        }
        Ref raw_ffn = combine_experts(tape, ps, expert_raw, n_parts[0], n, seg);
        std::vector<Ref> outs;
        outs.push_back(tape.add(h_parts[0], tape.dropout(raw_ffn, cfg.dropout)));
        for (int b = 0; with_bands && b < cfg.num_branches; ++b) {
          outs.push_back(tape.add(h_parts[static_cast<size_t>(1 + b)],
                                  tape.dropout(expert_band[static_cast<size_t>(b)], cfg.dropout)));
        }
        h = (outs.size() == 1) ? outs[0] : tape.concat_rows(outs);
      }
    }

    // token-mean pooling per window per stream
    Ref reps = tape.segment_mean(h, seg);  // {streams*n, D}
    auto rep_parts = tape.split_rows(reps, std::vector<int64_t>(static_cast<size_t>(streams), n));

    ForwardRefs<T> out;
    out.rep_raw = rep_parts[0];
    std::vector<Ref> head_on_raw(static_cast<size_t>(cfg.num_branches));
    for (int b = 0; b < cfg.num_branches; ++b) {
      head_on_raw[static_cast<size_t>(b)] = linear(tape, ps, "head" + std::to_string(b), rep_parts[0]);
    }
    out.z_data = combine_heads(tape, ps, head_on_raw, rep_parts[0], n, out);
    if (with_bands) {
      for (int b = 0; b < cfg.num_branches; ++b) {
        out.rep_branch.push_back(rep_parts[static_cast<size_t>(1 + b)]);
        out.z_branch.push_back(linear(tape, ps, "head" + std::to_string(b), rep_parts[static_cast<size_t>(1 + b)]));
      }
    }
    return out;
  }

  /// Raw-only inference logits for a batch.
  ForwardRefs<T> forward_infer(diff::Tape<T>& tape, const std::vector<const EegWindow*>& batch) const {
    return forward(tape, batch, {});
  }

 private:
  void add_linear(std::mt19937_64& rng, const std::string& prefix, int64_t in, int64_t out) {
    diff::Tensor<T> w({in, out});
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (auto& v : w.v) v = static_cast<T>(dist(rng));
    params.add(prefix + ".W", std::move(w));
    params.add(prefix + ".b", diff::Tensor<T>({out}));
  }
  void add_normal(std::mt19937_64& rng, const std::string& name, std::vector<int64_t> shape, double std_dev) {
    diff::Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& v : t.v) v = static_cast<T>(dist(rng));
    params.add(name, std::move(t));
  }
  void add_ln(const std::string& prefix, int64_t d) {
    diff::Tensor<T> g({d});
    std::fill(g.v.begin(), g.v.end(), T(1));
    params.add(prefix + ".g", std::move(g));
    params.add(prefix + ".b", diff::Tensor<T>({d}));
  }

  static Ref linear(diff::Tape<T>& tape, diff::ParamStore<T>& ps, const std::string& prefix, Ref x) {
    return tape.add(tape.matmul(x, tape.param(ps, prefix + ".W")), tape.param(ps, prefix + ".b"));
  }
  static Ref ffn(diff::Tape<T>& tape, diff::ParamStore<T>& ps, const std::string& prefix, Ref x) {
    Ref hmid = tape.gelu(linear(tape, ps, prefix + ".fc1", x));
    return linear(tape, ps, prefix + ".fc2", hmid);
  }

  Ref gate_weights(diff::Tape<T>& tape, diff::ParamStore<T>& ps, Ref rep) const {
    Ref hidden = tape.gelu(linear(tape, ps, "gate.fc1", rep));
    return tape.softmax(linear(tape, ps, "gate.fc2", hidden));
  }

  /// Weighted combination of per-expert outputs for the raw stream inside a
  /// multi-branch block: softmax(w) weights, plain average, or per-sample
  /// gate weights depending on the ensemble mode.
  Ref combine_experts(diff::Tape<T>& tape, diff::ParamStore<T>& ps, const std::vector<Ref>& expert_raw,
                      Ref raw_normed, int64_t n, int64_t seg) const {
    const int b_count = cfg.num_branches;
    if (ensemble == EnsembleMode::Average) {
      Ref acc = expert_raw[0];
      for (int b = 1; b < b_count; ++b) acc = tape.add(acc, expert_raw[static_cast<size_t>(b)]);
      return tape.scale(acc, 1.0 / b_count);
    }
    if (ensemble == EnsembleMode::GateNetwork) {
      Ref grep = tape.segment_mean(raw_normed, seg);            // {n, D}
      Ref gw = gate_weights(tape, ps, grep);                    // {n, B}
      Ref acc = -1;
      for (int b = 0; b < b_count; ++b) {
        Ref col = tape.reshape(tape.gather_index(gw, std::vector<int64_t>(static_cast<size_t>(n), b)), {n, 1});
        Ref term = tape.mul(expert_raw[static_cast<size_t>(b)], tape.repeat_interleave_rows(col, seg));
        acc = (acc < 0) ? term : tape.add(acc, term);
      }
      return acc;
    }
    Ref sm = tape.softmax(tape.param(ps, "wavelet_w"));
    Ref acc = -1;
    for (int b = 0; b < b_count; ++b) {
      Ref coef = tape.gather_index(sm, {b});
      Ref term = tape.scale_by(expert_raw[static_cast<size_t>(b)], coef);
      acc = (acc < 0) ? term : tape.add(acc, term);
    }
    return acc;
  }

  /// z_data: branch heads applied to the raw representation, combined with the
  /// same weighting scheme as the expert ensemble.
  Ref combine_heads(diff::Tape<T>& tape, diff::ParamStore<T>& ps, const std::vector<Ref>& head_on_raw,
                    Ref rep_raw, int64_t n, ForwardRefs<T>& out) const {
    const int b_count = cfg.num_branches;
    if (ensemble == EnsembleMode::Average) {
      Ref acc = head_on_raw[0];
      for (int b = 1; b < b_count; ++b) acc = tape.add(acc, head_on_raw[static_cast<size_t>(b)]);
      return tape.scale(acc, 1.0 / b_count);
    }
    if (ensemble == EnsembleMode::GateNetwork) {
      Ref gw = gate_weights(tape, ps, rep_raw);  // {n, B}
      out.gate_head = gw;
      Ref acc = -1;
      for (int b = 0; b < b_count; ++b) {
        Ref col = tape.reshape(tape.gather_index(gw, std::vector<int64_t>(static_cast<size_t>(n), b)), {n, 1});
        Ref term = tape.mul(head_on_raw[static_cast<size_t>(b)], col);
        acc = (acc < 0) ? term : tape.add(acc, term);
      }
      return acc;
    }
    Ref sm = tape.softmax(tape.param(ps, "wavelet_w"));
    Ref acc = -1;
    for (int b = 0; b < b_count; ++b) {
      Ref coef = tape.gather_index(sm, {b});
      Ref term = tape.scale_by(head_on_raw[static_cast<size_t>(b)], coef);
      acc = (acc < 0) ? term : tape.add(acc, term);
    }
    return acc;
  }
};

// --- checkpoint IO -------------------------------------------------------------
// Binary container: magic "MBMD", u32 version, u32 json_len, config JSON,
// u32 tensor count, then per tensor: u32 name_len, name, u32 rank, u64 dims,
// little-endian f32 values. Reload is bit-exact in 32-bit mode.

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Data, "cannot write checkpoint: " + path);
  auto put_u32 = [&](uint32_t x) { out.write(reinterpret_cast<const char*>(&x), 4); };
  auto put_u64 = [&](uint64_t x) { out.write(reinterpret_cast<const char*>(&x), 8); };

  nlohmann::json j;
  j["num_blocks"] = model.cfg.num_blocks;
  j["block_pattern"] = model.cfg.block_pattern;
  j["patch_size"] = model.cfg.patch_size;
  j["embed_dim"] = model.cfg.embed_dim;
  j["num_heads"] = model.cfg.num_heads;
  j["ffn_hidden"] = model.cfg.ffn_hidden;
  j["num_branches"] = model.cfg.num_branches;
  j["num_classes"] = model.cfg.num_classes;
  j["dropout"] = model.cfg.dropout;
  j["channels"] = model.cfg.channels;
  j["window_len"] = model.cfg.window_len;
  j["ensemble_mode"] = ensemble_mode_name(model.ensemble);
  const std::string cfg_json = j.dump();

  out.write("MBMD", 4);
  put_u32(kCheckpointVersion);
  put_u32(static_cast<uint32_t>(cfg_json.size()));
  out.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
  put_u32(static_cast<uint32_t>(model.params.entries.size()));
  for (const auto& e : model.params.entries) {
    put_u32(static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put_u32(static_cast<uint32_t>(e.value.shape.size()));
    for (int64_t d : e.value.shape) put_u64(static_cast<uint64_t>(d));
    std::vector<float> buf(e.value.v.begin(), e.value.v.end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  }
  require(out.good(), ErrorKind::Data, "checkpoint write failed: " + path);
}

template <typename T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::Data, "cannot open checkpoint: " + path);
  auto get_u32 = [&]() {
    uint32_t x = 0;
    in.read(reinterpret_cast<char*>(&x), 4);
    return x;
  };
  auto get_u64 = [&]() {
    uint64_t x = 0;
    in.read(reinterpret_cast<char*>(&x), 8);
    return x;
  };
  char magic[4];
  in.read(magic, 4);
  require(in.good() && std::memcmp(magic, "MBMD", 4) == 0, ErrorKind::Data, "not a checkpoint file: " + path);
  const uint32_t version = get_u32();
  require(version == kCheckpointVersion, ErrorKind::Data,
          "unsupported checkpoint version " + std::to_string(version));
  const uint32_t json_len = get_u32();
  std::string cfg_json(json_len, '\0');
  in.read(cfg_json.data(), json_len);
  nlohmann::json j = nlohmann::json::parse(cfg_json);

  ModelConfig cfg;
  cfg.num_blocks = j.at("num_blocks").get<int>();
  cfg.block_pattern = j.at("block_pattern").get<std::string>();
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.ffn_hidden = j.at("ffn_hidden").get<int>();
  cfg.num_branches = j.at("num_branches").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.dropout = j.at("dropout").get<double>();
  cfg.channels = j.at("channels").get<int>();
  cfg.window_len = j.at("window_len").get<int>();
  const EnsembleMode mode = ensemble_mode_from_name(j.at("ensemble_mode").get<std::string>());

  Model<T> model = Model<T>::init(cfg, mode, 0);
  const uint32_t count = get_u32();
  require(count == model.params.entries.size(), ErrorKind::Data,
          "checkpoint tensor count mismatch in " + path);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rank = get_u32();
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(get_u64());
    auto& entry = model.params.at(name);
    require(entry.value.shape == shape, ErrorKind::Data, "checkpoint shape mismatch for " + name);
    std::vector<float> buf(static_cast<size_t>(diff::Tensor<T>::numel_of(shape)));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
    require(in.good(), ErrorKind::Data, "truncated checkpoint: " + path);
    for (size_t k = 0; k < buf.size(); ++k) entry.value.v[k] = static_cast<T>(buf[k]);
  }
  return model;
}

}  // namespace mbmd
