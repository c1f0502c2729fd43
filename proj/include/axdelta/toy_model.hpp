#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "axdelta/container.hpp"
#include "axdelta/matrix.hpp"
#include "axdelta/rng.hpp"

namespace axdelta {

struct ModelSpec {
    std::size_t vocab = 256;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 128;
    std::size_t n_layers = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (vocab < 1 || d_model < 1 || n_heads < 1 || d_ff < 1 || n_layers < 1) {
            throw ConfigError("ModelSpec: all counts must be >= 1");
        }
        if (d_model % n_heads != 0) {
            throw ConfigError("ModelSpec: d_model " + std::to_string(d_model) +
                              " not divisible by n_heads " + std::to_string(n_heads));
        }
    }
    std::size_t head_dim() const { return d_model / n_heads; }
};

// The seven patchable projection sub-types, in canonical order.
enum class Proj : std::size_t { Q, K, V, O, Gate, Up, Down };
inline constexpr std::size_t kProjCount = 7;
inline constexpr std::array<std::string_view, kProjCount> kProjNames = {
    "q_proj", "k_proj", "v_proj", "o_proj", "gate_proj", "up_proj", "down_proj"};

inline bool is_attention(Proj p) { return static_cast<std::size_t>(p) < 4; }

inline std::string layer_name(std::size_t block, Proj p) {
    return "blocks." + std::to_string(block) + (is_attention(p) ? ".attn." : ".mlp.") +
           std::string(kProjNames[static_cast<std::size_t>(p)]);
}

struct LayerId {
    std::size_t block = 0;
    Proj proj = Proj::Q;
    friend bool operator==(const LayerId&, const LayerId&) = default;
};

// Parses "blocks.<n>.attn.<q|k|v|o>_proj" or "blocks.<n>.mlp.<gate|up|down>_proj".
inline LayerId parse_layer_name(std::string_view name, std::size_t n_layers) {
    auto fail = [&] { return LookupError("unknown layer '" + std::string(name) + "'"); };
    constexpr std::string_view prefix = "blocks.";
    if (!name.starts_with(prefix)) throw fail();
    name.remove_prefix(prefix.size());
    const auto dot = name.find('.');
    if (dot == std::string_view::npos || dot == 0) throw fail();
    std::size_t block = 0;
    auto [ptr, ec] = std::from_chars(name.data(), name.data() + dot, block);
    if (ec != std::errc() || ptr != name.data() + dot || block >= n_layers) throw fail();
    const std::string_view rest = name.substr(dot + 1);
    for (std::size_t p = 0; p < kProjCount; ++p) {
        const std::string group = p < 4 ? "attn." : "mlp.";
        if (rest == group + std::string(kProjNames[p])) return {block, static_cast<Proj>(p)};
    }
    throw fail();
}

inline std::string_view sub_type_of(std::string_view layer) {
    const auto dot = layer.rfind('.');
    return dot == std::string_view::npos ? layer : layer.substr(dot + 1);
}

struct Block {
    Matrix attn_norm;  // 1 x d_model
    std::array<Matrix, kProjCount> proj;
    Matrix mlp_norm;  // 1 x d_model

    Matrix& operator[](Proj p) { return proj[static_cast<std::size_t>(p)]; }
    const Matrix& operator[](Proj p) const { return proj[static_cast<std::size_t>(p)]; }
    friend bool operator==(const Block&, const Block&) = default;
};

struct ToyModel {
    ModelSpec spec;
    Matrix embedding;  // vocab x d_model
    std::vector<Block> blocks;
    Matrix final_norm;  // 1 x d_model
    Matrix head;        // vocab x d_model

    Matrix& weight(LayerId id) { return blocks.at(id.block)[id.proj]; }
    const Matrix& weight(LayerId id) const { return blocks.at(id.block)[id.proj]; }
    Matrix& weight(std::string_view name) { return weight(parse_layer_name(name, blocks.size())); }
    const Matrix& weight(std::string_view name) const {
        return weight(parse_layer_name(name, blocks.size()));
    }

    bool operator==(const ToyModel& o) const {
        return embedding == o.embedding && blocks == o.blocks && final_norm == o.final_norm &&
               head == o.head;
    }
};

inline std::pair<std::size_t, std::size_t> projection_shape(const ModelSpec& s, Proj p) {
    switch (p) {
        case Proj::Gate:
        case Proj::Up: return {s.d_ff, s.d_model};
        case Proj::Down: return {s.d_model, s.d_ff};
        default: return {s.d_model, s.d_model};
    }
}

// Canonical patchable layers: block ascending, then q,k,v,o,gate,up,down.
inline std::vector<std::string> linear_layer_names(const ToyModel& model) {
    std::vector<std::string> names;
    names.reserve(model.blocks.size() * kProjCount);
    for (std::size_t b = 0; b < model.blocks.size(); ++b)
        for (std::size_t p = 0; p < kProjCount; ++p) names.push_back(layer_name(b, static_cast<Proj>(p)));
    return names;
}

inline ToyModel init_base(const ModelSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const float stddev = 1.0f / std::sqrt(static_cast<float>(spec.d_model));
    auto normal_matrix = [&](std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (float& v : m.values()) v = static_cast<float>(rng.normal()) * stddev;
        return m;
    };
    ToyModel m;
    m.spec = spec;
    m.embedding = normal_matrix(spec.vocab, spec.d_model);
    m.blocks.resize(spec.n_layers);
    for (auto& b : m.blocks) {
        b.attn_norm = Matrix(1, spec.d_model, 1.0f);
        b.mlp_norm = Matrix(1, spec.d_model, 1.0f);
        for (std::size_t p = 0; p < kProjCount; ++p) {
            auto [r, c] = projection_shape(spec, static_cast<Proj>(p));
            b.proj[p] = normal_matrix(r, c);
        }
    }
    m.final_norm = Matrix(1, spec.d_model, 1.0f);
    m.head = normal_matrix(spec.vocab, spec.d_model);
    return m;
}

// ---------------------------------------------------------------------------
// Container conversion

inline TensorContainer to_container(const ToyModel& m) {
    TensorContainer c;
    c.add("meta.n_heads", Matrix(1, 1, static_cast<float>(m.spec.n_heads)));
    c.add("embed", m.embedding);
    for (std::size_t b = 0; b < m.blocks.size(); ++b) {
        const std::string pre = "blocks." + std::to_string(b);
        c.add(pre + ".attn_norm", m.blocks[b].attn_norm);
        for (std::size_t p = 0; p < kProjCount; ++p)
            c.add(layer_name(b, static_cast<Proj>(p)), m.blocks[b].proj[p]);
        c.add(pre + ".mlp_norm", m.blocks[b].mlp_norm);
    }
    c.add("final_norm", m.final_norm);
    c.add("head", m.head);
    return c;
}

inline ToyModel from_container(const TensorContainer& c) {
    ToyModel m;
    const Matrix& heads = c.at("meta.n_heads");
    if (heads.size() != 1 || heads.values()[0] < 1.0f) throw ConfigError("meta.n_heads malformed");
    m.embedding = c.at("embed");
    m.spec.vocab = m.embedding.rows();
    m.spec.d_model = m.embedding.cols();
    m.spec.n_heads = static_cast<std::size_t>(heads.values()[0]);
    std::size_t n_layers = 0;
    while (c.find("blocks." + std::to_string(n_layers) + ".attn_norm")) ++n_layers;
    m.spec.n_layers = n_layers;
    m.spec.d_ff = n_layers > 0 ? c.at(layer_name(0, Proj::Gate)).rows() : 1;
    m.spec.validate();
    auto expect = [](const Matrix& t, std::size_t r, std::size_t cols, const std::string& name) {
        if (t.rows() != r || t.cols() != cols) {
            throw DimensionError("tensor '" + name + "' has shape " + t.shape_string() +
                                 ", expected (" + std::to_string(r) + "x" + std::to_string(cols) + ")");
        }
    };
    m.blocks.resize(n_layers);
    for (std::size_t b = 0; b < n_layers; ++b) {
        const std::string pre = "blocks." + std::to_string(b);
        m.blocks[b].attn_norm = c.at(pre + ".attn_norm");
        m.blocks[b].mlp_norm = c.at(pre + ".mlp_norm");
        expect(m.blocks[b].attn_norm, 1, m.spec.d_model, pre + ".attn_norm");
        expect(m.blocks[b].mlp_norm, 1, m.spec.d_model, pre + ".mlp_norm");
        for (std::size_t p = 0; p < kProjCount; ++p) {
            const std::string name = layer_name(b, static_cast<Proj>(p));
            m.blocks[b].proj[p] = c.at(name);
            auto [r, cols] = projection_shape(m.spec, static_cast<Proj>(p));
            expect(m.blocks[b].proj[p], r, cols, name);
        }
    }
    m.final_norm = c.at("final_norm");
    m.head = c.at("head");
    expect(m.final_norm, 1, m.spec.d_model, "final_norm");
    expect(m.head, m.spec.vocab, m.spec.d_model, "head");
    return m;
}

// ---------------------------------------------------------------------------
// Token batches

struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::uint32_t> ids;  // batch x seq, row-major

    std::size_t rows() const { return batch * seq; }
};

inline std::vector<TokenBatch> synthetic_batches(std::size_t count, std::size_t batch_size,
                                                 std::size_t seq_len, std::size_t vocab,
                                                 std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TokenBatch> out(count);
    for (auto& b : out) {
        b.batch = batch_size;
        b.seq = seq_len;
        b.ids.resize(batch_size * seq_len);
        for (auto& id : b.ids) id = static_cast<std::uint32_t>(rng.below(vocab));
    }
    return out;
}

// One sequence per line, space-separated base-10 token ids.
inline std::vector<std::vector<std::uint32_t>> parse_token_lines(std::istream& in) {
    std::vector<std::vector<std::uint32_t>> seqs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::vector<std::uint32_t> seq;
        std::string tok;
        while (ls >> tok) {
            std::uint32_t v = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || p != tok.data() + tok.size()) {
                throw InputError("token file line " + std::to_string(lineno) + ": bad token '" + tok + "'");
            }
            seq.push_back(v);
        }
        if (!seq.empty()) seqs.push_back(std::move(seq));
    }
    return seqs;
}

inline std::vector<std::vector<std::uint32_t>> read_token_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open token file '" + path + "'");
    return parse_token_lines(in);
}

// Groups sequences into batches of batch_size (the last partial group is
// dropped). Sequences within a batch must share a length.
inline std::vector<TokenBatch> batches_from_sequences(
    const std::vector<std::vector<std::uint32_t>>& seqs, std::size_t batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    std::vector<TokenBatch> out;
    for (std::size_t start = 0; start + batch_size <= seqs.size(); start += batch_size) {
        TokenBatch b;
        b.batch = batch_size;
        b.seq = seqs[start].size();
        for (std::size_t i = start; i < start + batch_size; ++i) {
            if (seqs[i].size() != b.seq) {
                throw InputError("sequences in one batch must have equal length (sequence " +
                                 std::to_string(i) + ")");
            }
            b.ids.insert(b.ids.end(), seqs[i].begin(), seqs[i].end());
        }
        out.push_back(std::move(b));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

enum class CaptureMode { Input, Output };

struct TapPoint {
    std::string layer;
    CaptureMode mode = CaptureMode::Input;
    friend auto operator<=>(const TapPoint&, const TapPoint&) = default;
};

struct ForwardResult {
    Matrix logits;
    std::map<TapPoint, Matrix> captures;
};

namespace detail {

inline constexpr float kRmsEps = 1e-5f;

// y = x * gain / rms(x); returns per-row 1/rms for the backward pass.
inline Matrix rms_norm(const Matrix& x, const Matrix& gain, std::vector<float>& inv_rms) {
    Matrix y(x.rows(), x.cols());
    inv_rms.resize(x.rows());
    const auto g = gain.values();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        float ss = 0.0f;
        for (float v : xr) ss += v * v;
        const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.cols()) + kRmsEps);
        inv_rms[r] = inv;
        auto yr = y.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) yr[c] = xr[c] * inv * g[c];
    }
    return y;
}

inline Matrix rms_norm_backward(const Matrix& x, const Matrix& gain, const std::vector<float>& inv_rms,
                                const Matrix& dy) {
    Matrix dx(x.rows(), x.cols());
    const auto g = gain.values();
    const float n = static_cast<float>(x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        auto dyr = dy.row(r);
        const float inv = inv_rms[r];
        float dot = 0.0f;
        for (std::size_t c = 0; c < x.cols(); ++c) dot += g[c] * dyr[c] * xr[c];
        const float k = inv * inv * inv * dot / n;
        auto dxr = dx.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) dxr[c] = inv * g[c] * dyr[c] - k * xr[c];
    }
    return dx;
}

inline float sigmoid(float z) { return 1.0f / (1.0f + std::exp(-z)); }

struct BlockTrace {
    Matrix h_in;
    std::vector<float> inv_rms_attn;
    Matrix xa, q, k, v;
    std::vector<Matrix> probs;  // per (sequence, head): seq x seq, causal
    Matrix ctx;
    Matrix h_mid;
    std::vector<float> inv_rms_mlp;
    Matrix xm, gate, up, act;
};

}  // namespace detail

struct ForwardTrace {
    std::size_t batch = 0;
    std::size_t seq = 0;
    std::vector<std::uint32_t> ids;
    std::vector<detail::BlockTrace> blocks;
    Matrix h_final;
    std::vector<float> inv_rms_final;
    Matrix xf;
};

namespace detail {

inline void check_tokens(const ToyModel& model, const TokenBatch& tokens) {
    if (tokens.batch == 0 || tokens.seq == 0 || tokens.ids.size() != tokens.rows()) {
        throw InputError("token batch is empty or ragged");
    }
    for (auto id : tokens.ids) {
        if (id >= model.spec.vocab) {
            throw InputError("token id " + std::to_string(id) + " out of range for vocab " +
                             std::to_string(model.spec.vocab));
        }
    }
}

// Causal softmax attention over each (sequence, head) slice.
inline Matrix attention(const ModelSpec& spec, std::size_t batch, std::size_t seq, const Matrix& q,
                        const Matrix& k, const Matrix& v, std::vector<Matrix>* probs_out) {
    const std::size_t dh = spec.head_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Matrix ctx(q.rows(), q.cols());
    std::vector<float> scores(seq);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < spec.n_heads; ++h) {
            const std::size_t off = h * dh;
            Matrix probs(seq, seq);
            for (std::size_t t = 0; t < seq; ++t) {
                const float* qt = q.row(b * seq + t).data() + off;
                float mx = -INFINITY;
                for (std::size_t s = 0; s <= t; ++s) {
                    const float* ks = k.row(b * seq + s).data() + off;
                    float acc = 0.0f;
                    for (std::size_t d = 0; d < dh; ++d) acc += qt[d] * ks[d];
                    scores[s] = acc * scale;
                    mx = std::max(mx, scores[s]);
                }
                float denom = 0.0f;
                for (std::size_t s = 0; s <= t; ++s) {
                    scores[s] = std::exp(scores[s] - mx);
                    denom += scores[s];
                }
                float* ct = ctx.row(b * seq + t).data() + off;
                for (std::size_t s = 0; s <= t; ++s) {
                    const float p = scores[s] / denom;
                    probs(t, s) = p;
                    const float* vs = v.row(b * seq + s).data() + off;
                    for (std::size_t d = 0; d < dh; ++d) ct[d] += p * vs[d];
                }
            }
            if (probs_out) probs_out->push_back(std::move(probs));
        }
    }
    return ctx;
}

}  // namespace detail

// Runs the model on a token batch. Each requested tap receives a copy of the
// activation entering (Input) or leaving (Output) the named projection,
// flattened to (batch*seq, features). With `trace` set, intermediate
// activations are kept for backward().
// With `need_logits` false the pass stops as soon as every tap has been
// captured and the returned logits are empty.
inline ForwardResult forward(const ToyModel& model, const TokenBatch& tokens,
                             const std::vector<TapPoint>& taps = {}, ForwardTrace* trace = nullptr,
                             bool need_logits = true) {
    detail::check_tokens(model, tokens);
    const ModelSpec& spec = model.spec;

    // tap lookup: [block][proj] -> (want input, want output)
    std::vector<std::array<std::pair<bool, bool>, kProjCount>> wanted(model.blocks.size());
    for (const auto& tap : taps) {
        const LayerId id = parse_layer_name(tap.layer, model.blocks.size());
        auto& w = wanted[id.block][static_cast<std::size_t>(id.proj)];
        (tap.mode == CaptureMode::Input ? w.first : w.second) = true;
    }
    std::size_t last_tapped_block = 0;
    for (std::size_t b = 0; b < wanted.size(); ++b)
        for (const auto& w : wanted[b])
            if (w.first || w.second) last_tapped_block = b;
    const bool early_exit = !need_logits && !taps.empty() && trace == nullptr;

    ForwardResult result;
    auto project = [&](std::size_t b, Proj p, const Matrix& x) {
        const auto& w = wanted[b][static_cast<std::size_t>(p)];
        if (w.first) result.captures[{layer_name(b, p), CaptureMode::Input}] = x;
        Matrix y = matmul_nt(x, model.blocks[b][p]);
        if (w.second) result.captures[{layer_name(b, p), CaptureMode::Output}] = y;
        return y;
    };

    const std::size_t n = tokens.rows();
    Matrix h(n, spec.d_model);
    for (std::size_t r = 0; r < n; ++r) {
        auto src = model.embedding.row(tokens.ids[r]);
        std::copy(src.begin(), src.end(), h.row(r).begin());
    }
    if (trace) {
        trace->batch = tokens.batch;
        trace->seq = tokens.seq;
        trace->ids = tokens.ids;
        trace->blocks.assign(model.blocks.size(), {});
    }

    for (std::size_t b = 0; b < model.blocks.size(); ++b) {
        const Block& blk = model.blocks[b];
        detail::BlockTrace local;
        detail::BlockTrace& bt = trace ? trace->blocks[b] : local;

        Matrix xa = detail::rms_norm(h, blk.attn_norm, bt.inv_rms_attn);
        Matrix q = project(b, Proj::Q, xa);
        Matrix k = project(b, Proj::K, xa);
        Matrix v = project(b, Proj::V, xa);
        Matrix ctx = detail::attention(spec, tokens.batch, tokens.seq, q, k, v, trace ? &bt.probs : nullptr);
        Matrix attn_out = project(b, Proj::O, ctx);
        Matrix h_mid = add(h, attn_out);

        Matrix xm = detail::rms_norm(h_mid, blk.mlp_norm, bt.inv_rms_mlp);
        Matrix gate = project(b, Proj::Gate, xm);
        Matrix up = project(b, Proj::Up, xm);
        Matrix act(gate.rows(), gate.cols());
        for (std::size_t i = 0; i < act.size(); ++i) {
            const float g = gate.values()[i];
            act.values()[i] = g * detail::sigmoid(g) * up.values()[i];
        }
        Matrix down = project(b, Proj::Down, act);
        Matrix h_out = add(h_mid, down);

        if (trace) {
            bt.h_in = std::move(h);
            bt.xa = std::move(xa);
            bt.q = std::move(q);
            bt.k = std::move(k);
            bt.v = std::move(v);
            bt.ctx = std::move(ctx);
            bt.h_mid = std::move(h_mid);
            bt.xm = std::move(xm);
            bt.gate = std::move(gate);
            bt.up = std::move(up);
            bt.act = std::move(act);
        }
        h = std::move(h_out);
        if (early_exit && b == last_tapped_block) return result;
    }

    std::vector<float> inv_final;
    Matrix xf = detail::rms_norm(h, model.final_norm, inv_final);
    result.logits = matmul_nt(xf, model.head);
    if (trace) {
        trace->h_final = std::move(h);
        trace->inv_rms_final = std::move(inv_final);
        trace->xf = std::move(xf);
    }
    return result;
}

// Gradients of a scalar loss with respect to every projection weight, given
// dL/dlogits and the trace of the forward pass that produced the logits.
// Embeddings, norms and the head are treated as frozen.
inline std::vector<std::array<Matrix, kProjCount>> backward(const ToyModel& model,
                                                            const ForwardTrace& trace,
                                                            const Matrix& dlogits) {
    const ModelSpec& spec = model.spec;
    std::vector<std::array<Matrix, kProjCount>> grads(model.blocks.size());

    Matrix dxf = matmul_nn(dlogits, model.head);
    Matrix dh = detail::rms_norm_backward(trace.h_final, model.final_norm, trace.inv_rms_final, dxf);

    const std::size_t dh_dim = spec.head_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh_dim));
    const std::size_t seq = trace.seq;

    for (std::size_t bi = model.blocks.size(); bi-- > 0;) {
        const Block& blk = model.blocks[bi];
        const detail::BlockTrace& bt = trace.blocks[bi];
        auto& g = grads[bi];

        // MLP
        const Matrix& d_down = dh;
        g[static_cast<std::size_t>(Proj::Down)] = matmul_tn(d_down, bt.act);
        Matrix d_act = matmul_nn(d_down, blk[Proj::Down]);
        Matrix d_gate(d_act.rows(), d_act.cols());
        Matrix d_up(d_act.rows(), d_act.cols());
        for (std::size_t i = 0; i < d_act.size(); ++i) {
            const float z = bt.gate.values()[i];
            const float sig = detail::sigmoid(z);
            const float silu = z * sig;
            d_up.values()[i] = d_act.values()[i] * silu;
            d_gate.values()[i] = d_act.values()[i] * bt.up.values()[i] * sig * (1.0f + z * (1.0f - sig));
        }
        g[static_cast<std::size_t>(Proj::Gate)] = matmul_tn(d_gate, bt.xm);
        g[static_cast<std::size_t>(Proj::Up)] = matmul_tn(d_up, bt.xm);
        Matrix dxm = add(matmul_nn(d_gate, blk[Proj::Gate]), matmul_nn(d_up, blk[Proj::Up]));
        Matrix dh_mid = add(dh, detail::rms_norm_backward(bt.h_mid, blk.mlp_norm, bt.inv_rms_mlp, dxm));

        // Attention
        g[static_cast<std::size_t>(Proj::O)] = matmul_tn(dh_mid, bt.ctx);
        Matrix dctx = matmul_nn(dh_mid, blk[Proj::O]);
        Matrix dq(dctx.rows(), dctx.cols());
        Matrix dk(dctx.rows(), dctx.cols());
        Matrix dv(dctx.rows(), dctx.cols());
        std::vector<float> dp(seq);
        for (std::size_t b = 0; b < trace.batch; ++b) {
            for (std::size_t h = 0; h < spec.n_heads; ++h) {
                const Matrix& probs = bt.probs[b * spec.n_heads + h];
                const std::size_t off = h * dh_dim;
                for (std::size_t t = 0; t < seq; ++t) {
                    const float* dot = dctx.row(b * seq + t).data() + off;
                    float weighted = 0.0f;
                    for (std::size_t s = 0; s <= t; ++s) {
                        const float* vs = bt.v.row(b * seq + s).data() + off;
                        float* dvs = dv.row(b * seq + s).data() + off;
                        const float p = probs(t, s);
                        float acc = 0.0f;
                        for (std::size_t d = 0; d < dh_dim; ++d) {
                            acc += dot[d] * vs[d];
                            dvs[d] += p * dot[d];
                        }
                        dp[s] = acc;
                        weighted += p * acc;
                    }
                    const float* qt = bt.q.row(b * seq + t).data() + off;
                    float* dqt = dq.row(b * seq + t).data() + off;
                    for (std::size_t s = 0; s <= t; ++s) {
                        const float ds = probs(t, s) * (dp[s] - weighted) * scale;
                        const float* ks = bt.k.row(b * seq + s).data() + off;
                        float* dks = dk.row(b * seq + s).data() + off;
                        for (std::size_t d = 0; d < dh_dim; ++d) {
                            dqt[d] += ds * ks[d];
                            dks[d] += ds * qt[d];
                        }
                    }
                }
            }
        }
        g[static_cast<std::size_t>(Proj::Q)] = matmul_tn(dq, bt.xa);
        g[static_cast<std::size_t>(Proj::K)] = matmul_tn(dk, bt.xa);
        g[static_cast<std::size_t>(Proj::V)] = matmul_tn(dv, bt.xa);
        Matrix dxa = add(add(matmul_nn(dq, blk[Proj::Q]), matmul_nn(dk, blk[Proj::K])),
                         matmul_nn(dv, blk[Proj::V]));
        dh = add(dh_mid, detail::rms_norm_backward(bt.h_in, blk.attn_norm, bt.inv_rms_attn, dxa));
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Synthetic fine-tunes

enum class DeltaAxis { Row, Col, Isotropic };

// Controls the structure of a generated weight delta. Scales are drawn
// log-uniform in [0.1*magnitude, magnitude] per row, per column, or once per
// matrix. A nonzero `jitter` multiplies every entry by exp(jitter * N(0,1)),
// which breaks exact per-axis structure.
struct DeltaProfile {
    DeltaAxis axis = DeltaAxis::Row;
    float magnitude = 0.02f;
    std::uint64_t seed = 1;
    float jitter = 0.0f;
};

struct SyntheticDelta {
    Matrix delta;
    std::vector<float> scales;  // length d_out (row), d_in (col) or 1 (isotropic)
};

inline SyntheticDelta synth_delta(std::size_t d_out, std::size_t d_in, const DeltaProfile& profile,
                                  std::uint64_t stream_seed) {
    if (!(profile.magnitude >= 0.0f) || !std::isfinite(profile.magnitude)) {
        throw ConfigError("delta magnitude must be finite and >= 0");
    }
    if (!(profile.jitter >= 0.0f)) throw ConfigError("delta jitter must be >= 0");
    Rng rng(stream_seed);
    const std::size_t n_scales =
        profile.axis == DeltaAxis::Row ? d_out : profile.axis == DeltaAxis::Col ? d_in : 1;
    SyntheticDelta out{Matrix(d_out, d_in), std::vector<float>(n_scales, 0.0f)};
    if (profile.magnitude == 0.0f) return out;
    const double lo = std::log(0.1 * profile.magnitude);
    const double hi = std::log(static_cast<double>(profile.magnitude));
    for (float& s : out.scales) s = static_cast<float>(std::exp(rng.uniform(lo, hi)));
    for (std::size_t i = 0; i < d_out; ++i) {
        for (std::size_t j = 0; j < d_in; ++j) {
            const float s = profile.axis == DeltaAxis::Row ? out.scales[i]
                            : profile.axis == DeltaAxis::Col ? out.scales[j]
                                                             : out.scales[0];
            float v = rng.sign() ? s : -s;
            if (profile.jitter > 0.0f) v *= static_cast<float>(std::exp(profile.jitter * rng.normal()));
            out.delta(i, j) = v;
        }
    }
    return out;
}

struct SyntheticFinetune {
    ToyModel model;
    std::map<std::string, std::vector<float>> true_scales;
};

// base + structured delta on each of the seven projection sub-types. Embedding,
// norms and head are copied unchanged.
inline SyntheticFinetune synth_finetune(const ToyModel& base, const DeltaProfile& profile) {
    SyntheticFinetune out{base, {}};
    const auto names = linear_layer_names(base);
    for (std::size_t idx = 0; idx < names.size(); ++idx) {
        Matrix& w = out.model.weight(names[idx]);
        SyntheticDelta d = synth_delta(w.rows(), w.cols(), profile, derive_seed(profile.seed, idx));
        w = add(w, d.delta);
        out.true_scales.emplace(names[idx], std::move(d.scales));
    }
    return out;
}

}  // namespace axdelta
