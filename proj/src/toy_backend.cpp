// Copyright 2026 The TTW Authors
// SPDX-License-Identifier: Apache-2.0

#include "ttw/toy_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "ttw/random.hpp"

namespace ttw {

namespace {

constexpr int kPad = 0;
constexpr int kSep = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;
constexpr int kFirstChar = 4;

int char_token(unsigned char c) {
    if (c == '\n' || c == '\t' || c == '\r') c = ' ';
    if (c >= 32 && c <= 126) return kFirstChar + (c - 32);
    return kUnk;
}

char token_char(int t) { return static_cast<char>(t - kFirstChar + 32); }

void init_normal(std::vector<float>& w, double stddev, Rng& rng) {
    for (auto& x : w) x = static_cast<float>(rng.normal() * stddev);
}

}  // namespace

struct ToyBackend::Encoded {
    std::vector<int> tokens;
    std::size_t prompt_len = 0;  // tokens[prompt_len] is SEP
};

ToyBackend::ToyBackend(ToyModelConfig config) : config_(config) {
    const auto& c = config_;
    if (c.pixels < 1 || c.vision_dim < 1 || c.connector_dim < 1 || c.embed_dim < 1 || c.context < 1 || c.hidden < 1 ||
        c.prompt_buckets < 1 || c.context_limit < 1)
        throw Error("toy model dimensions must be positive");
    const std::size_t in = static_cast<std::size_t>(c.context * c.embed_dim + c.connector_dim + c.embed_dim);

    Rng rng(derive_seed(c.seed, "toy-init"));
    init_normal(add_parameter("vision.proj", static_cast<std::size_t>(c.vision_dim * c.pixels), false).value,
                std::sqrt(3.0 / c.pixels), rng);
    init_normal(add_parameter("vision.bias", static_cast<std::size_t>(c.vision_dim), false).value, 0.1, rng);
    init_normal(add_parameter("connector.weight", static_cast<std::size_t>(c.connector_dim * c.vision_dim), true).value,
                1.0 / std::sqrt(static_cast<double>(c.vision_dim)), rng);
    add_parameter("connector.bias", static_cast<std::size_t>(c.connector_dim), true);
    init_normal(add_parameter("llm.tok_emb", static_cast<std::size_t>(kVocab * c.embed_dim), true).value, 0.5, rng);
    init_normal(add_parameter("llm.prompt_emb", static_cast<std::size_t>(c.prompt_buckets * c.embed_dim), true).value,
                0.5, rng);
    init_normal(add_parameter("llm.hidden.weight", static_cast<std::size_t>(c.hidden) * in, true).value,
                1.0 / std::sqrt(static_cast<double>(in)), rng);
    add_parameter("llm.hidden.bias", static_cast<std::size_t>(c.hidden), true);
    init_normal(add_parameter("llm.out.weight", static_cast<std::size_t>(kVocab * c.hidden), true).value,
                0.5 / std::sqrt(static_cast<double>(c.hidden)), rng);
    add_parameter("llm.out.bias", static_cast<std::size_t>(kVocab), true);
    weights_replaced();
}

void ToyBackend::weights_replaced() {
    identity_ = fingerprint_blocks(all_parameters());
}

std::string ToyBackend::model_id() const { return "toy-char-mlp@" + identity_; }

std::size_t ToyBackend::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : all_parameters()) n += v.size();
    return n;
}

std::vector<float> ToyBackend::image_pixels(const ImageRef& image) const {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = image.load();
    } catch (const Error& e) {
        throw ImageDecodeError(fmt::format("cannot decode image {}: {}", image.describe(), e.what()));
    }
    const std::size_t n = bytes.size();
    const std::size_t p = static_cast<std::size_t>(config_.pixels);
    std::vector<float> pixels(p);
    for (std::size_t i = 0; i < p; ++i) {
        double v;
        if (n < p) {
            v = bytes[i % n];
        } else {
            const std::size_t b = i * n / p;
            const std::size_t e = (i + 1) * n / p;
            double sum = 0;
            for (std::size_t j = b; j < e; ++j) sum += bytes[j];
            v = sum / static_cast<double>(e - b);
        }
        pixels[i] = static_cast<float>(v / 127.5 - 1.0);
    }
    return pixels;
}

void ToyBackend::connector_forward(const std::vector<float>& pixels, std::vector<float>& vision,
                                   std::vector<float>& conn) const {
    const int P = config_.pixels, D = config_.vision_dim, C = config_.connector_dim;
    const float* wv = param("vision.proj").value.data();
    const float* bv = param("vision.bias").value.data();
    const float* wc = param("connector.weight").value.data();
    const float* bc = param("connector.bias").value.data();
    vision.assign(static_cast<std::size_t>(D), 0.0f);
    for (int i = 0; i < D; ++i) {
        float s = bv[i];
        for (int j = 0; j < P; ++j) s += wv[i * P + j] * pixels[static_cast<std::size_t>(j)];
        vision[static_cast<std::size_t>(i)] = std::tanh(s);
    }
    conn.assign(static_cast<std::size_t>(C), 0.0f);
    for (int i = 0; i < C; ++i) {
        float s = bc[i];
        for (int j = 0; j < D; ++j) s += wc[i * D + j] * vision[static_cast<std::size_t>(j)];
        conn[static_cast<std::size_t>(i)] = s;
    }
}

std::vector<float> ToyBackend::prompt_summary(std::string_view prompt, std::vector<int>* buckets) const {
    const int E = config_.embed_dim;
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) ids.push_back(static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(config_.prompt_buckets)));
        word.clear();
    };
    for (unsigned char ch : prompt) {
        if (std::isalnum(ch)) word.push_back(static_cast<char>(std::tolower(ch)));
        else flush();
    }
    flush();
    std::vector<float> summary(static_cast<std::size_t>(E), 0.0f);
    const float* emb = param("llm.prompt_emb").value.data();
    for (int b : ids)
        for (int k = 0; k < E; ++k) summary[static_cast<std::size_t>(k)] += emb[b * E + k];
    if (!ids.empty())
        for (auto& v : summary) v /= static_cast<float>(ids.size());
    if (buckets) *buckets = std::move(ids);
    return summary;
}

void ToyBackend::step_logits(const int* ctx, const float* conn, const float* prompt_vec, float* x, float* h,
                             float* logits) const {
    const int E = config_.embed_dim, K = config_.context, C = config_.connector_dim, H = config_.hidden;
    const int in = K * E + C + E;
    const float* emb = param("llm.tok_emb").value.data();
    for (int k = 0; k < K; ++k) std::copy_n(emb + ctx[k] * E, E, x + k * E);
    std::copy_n(conn, C, x + K * E);
    std::copy_n(prompt_vec, E, x + K * E + C);

    const float* wh = param("llm.hidden.weight").value.data();
    const float* bh = param("llm.hidden.bias").value.data();
    for (int i = 0; i < H; ++i) {
        const float* row = wh + static_cast<std::size_t>(i) * static_cast<std::size_t>(in);
        float s = bh[i];
        for (int j = 0; j < in; ++j) s += row[j] * x[j];
        h[i] = std::tanh(s);
    }
    const float* wo = param("llm.out.weight").value.data();
    const float* bo = param("llm.out.bias").value.data();
    for (int v = 0; v < kVocab; ++v) {
        const float* row = wo + v * H;
        float s = bo[v];
        for (int i = 0; i < H; ++i) s += row[i] * h[i];
        logits[v] = s;
    }
}

ToyBackend::Encoded ToyBackend::encode(const TrainExample& example) const {
    if (example.target.empty()) throw Error("training target is empty: no supervisable tokens");
    if (example.prompt.size() + 1 > static_cast<std::size_t>(config_.context_limit))
        throw ContextOverflowError(fmt::format("prompt of {} characters exceeds the toy model context of {}",
                                               example.prompt.size(), config_.context_limit));
    Encoded enc;
    enc.tokens.reserve(example.prompt.size() + example.target.size() + 2);
    for (unsigned char c : example.prompt) enc.tokens.push_back(char_token(c));
    enc.prompt_len = enc.tokens.size();
    enc.tokens.push_back(kSep);
    for (unsigned char c : example.target) enc.tokens.push_back(char_token(c));
    enc.tokens.push_back(kEos);
    return enc;
}

double ToyBackend::loss(std::span<const TrainExample> batch, bool backward) {
    if (batch.empty()) throw Error("training batch is empty");
    const int E = config_.embed_dim, K = config_.context, C = config_.connector_dim, H = config_.hidden,
              D = config_.vision_dim;
    const int in = K * E + C + E;

    std::vector<Encoded> encoded;
    encoded.reserve(batch.size());
    std::size_t supervised = 0;
    for (const auto& ex : batch) {
        encoded.push_back(encode(ex));
        const auto& enc = encoded.back();
        supervised += supervise_prompt_ ? enc.tokens.size() : enc.tokens.size() - enc.prompt_len - 1;
    }
    const float scale = 1.0f / static_cast<float>(supervised);

    if (backward) zero_grad();
    float* g_emb = backward ? param("llm.tok_emb").grad.data() : nullptr;
    float* g_pemb = backward ? param("llm.prompt_emb").grad.data() : nullptr;
    float* g_wh = backward ? param("llm.hidden.weight").grad.data() : nullptr;
    float* g_bh = backward ? param("llm.hidden.bias").grad.data() : nullptr;
    float* g_wo = backward ? param("llm.out.weight").grad.data() : nullptr;
    float* g_bo = backward ? param("llm.out.bias").grad.data() : nullptr;
    float* g_wc = backward ? param("connector.weight").grad.data() : nullptr;
    float* g_bc = backward ? param("connector.bias").grad.data() : nullptr;
    const float* wh = param("llm.hidden.weight").value.data();
    const float* wo = param("llm.out.weight").value.data();

    std::vector<float> x(static_cast<std::size_t>(in)), h(static_cast<std::size_t>(H)), logits(kVocab),
        dlogits(kVocab), dh(static_cast<std::size_t>(H)), dx(static_cast<std::size_t>(in));
    std::vector<float> vision, conn;
    std::vector<int> ctx(static_cast<std::size_t>(K));
    double total = 0.0;

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& enc = encoded[b];
        connector_forward(image_pixels(batch[b].image), vision, conn);
        std::vector<int> buckets;
        const std::vector<float> pv = prompt_summary(batch[b].prompt, &buckets);
        std::vector<float> dconn(static_cast<std::size_t>(C), 0.0f), dpv(static_cast<std::size_t>(E), 0.0f);

        const std::size_t first = supervise_prompt_ ? 0 : enc.prompt_len + 1;
        for (std::size_t t = first; t < enc.tokens.size(); ++t) {
            for (int k = 0; k < K; ++k) {
                const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t) - K + k;
                ctx[static_cast<std::size_t>(k)] = pos < 0 ? kPad : enc.tokens[static_cast<std::size_t>(pos)];
            }
            step_logits(ctx.data(), conn.data(), pv.data(), x.data(), h.data(), logits.data());
            const int target = enc.tokens[t];
            const float mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (int v = 0; v < kVocab; ++v) z += std::exp(static_cast<double>(logits[static_cast<std::size_t>(v)] - mx));
            const double logz = std::log(z) + mx;
            total += logz - logits[static_cast<std::size_t>(target)];
            if (!backward) continue;

            for (int v = 0; v < kVocab; ++v) {
                const double p = std::exp(static_cast<double>(logits[static_cast<std::size_t>(v)]) - logz);
                dlogits[static_cast<std::size_t>(v)] = static_cast<float>((p - (v == target ? 1.0 : 0.0)) * scale);
            }
            std::fill(dh.begin(), dh.end(), 0.0f);
            for (int v = 0; v < kVocab; ++v) {
                const float d = dlogits[static_cast<std::size_t>(v)];
                g_bo[v] += d;
                float* grow = g_wo + v * H;
                const float* row = wo + v * H;
                for (int i = 0; i < H; ++i) {
                    grow[i] += d * h[static_cast<std::size_t>(i)];
                    dh[static_cast<std::size_t>(i)] += d * row[i];
                }
            }
            std::fill(dx.begin(), dx.end(), 0.0f);
            for (int i = 0; i < H; ++i) {
                const float hi = h[static_cast<std::size_t>(i)];
                const float dpre = dh[static_cast<std::size_t>(i)] * (1.0f - hi * hi);
                if (dpre == 0.0f) continue;
                g_bh[i] += dpre;
                float* grow = g_wh + static_cast<std::size_t>(i) * static_cast<std::size_t>(in);
                const float* row = wh + static_cast<std::size_t>(i) * static_cast<std::size_t>(in);
                for (int j = 0; j < in; ++j) {
                    grow[j] += dpre * x[static_cast<std::size_t>(j)];
                    dx[static_cast<std::size_t>(j)] += dpre * row[j];
                }
            }
            for (int k = 0; k < K; ++k) {
                float* ge = g_emb + ctx[static_cast<std::size_t>(k)] * E;
                for (int e = 0; e < E; ++e) ge[e] += dx[static_cast<std::size_t>(k * E + e)];
            }
            for (int c = 0; c < C; ++c) dconn[static_cast<std::size_t>(c)] += dx[static_cast<std::size_t>(K * E + c)];
            for (int e = 0; e < E; ++e) dpv[static_cast<std::size_t>(e)] += dx[static_cast<std::size_t>(K * E + C + e)];
        }

        if (!backward) continue;
        // The vision projection is frozen: the chain stops at the connector.
        for (int c = 0; c < C; ++c) {
            const float d = dconn[static_cast<std::size_t>(c)];
            g_bc[c] += d;
            for (int j = 0; j < D; ++j) g_wc[c * D + j] += d * vision[static_cast<std::size_t>(j)];
        }
        if (!buckets.empty()) {
            const float inv = 1.0f / static_cast<float>(buckets.size());
            for (int bk : buckets)
                for (int e = 0; e < E; ++e) g_pemb[bk * E + e] += dpv[static_cast<std::size_t>(e)] * inv;
        }
    }
    return total / static_cast<double>(supervised);
}

double ToyBackend::evaluate_loss(std::span<const TrainExample> batch) { return loss(batch, false); }

double ToyBackend::train_step(std::span<const TrainExample> batch, double learning_rate, OptimizerState& state) {
    const double l = loss(batch, true);
    if (!std::isfinite(l) || !grads_finite()) throw NonFiniteLossError(fmt::format("non-finite loss ({})", l));
    apply_adamw(learning_rate, state);
    return l;
}

std::string ToyBackend::generate(const ImageRef& image, std::string_view prompt, const GenerationParams& params) {
    if (auto v = validate_generation_params(params); !v.empty()) throw Error(v.front());
    if (prompt.size() + 1 > static_cast<std::size_t>(config_.context_limit))
        throw ContextOverflowError(fmt::format("prompt of {} characters exceeds the toy model context of {}",
                                               prompt.size(), config_.context_limit));
    const int E = config_.embed_dim, K = config_.context, C = config_.connector_dim, H = config_.hidden;
    std::vector<float> vision, conn;
    connector_forward(image_pixels(image), vision, conn);
    const std::vector<float> pv = prompt_summary(prompt, nullptr);

    std::vector<int> history(static_cast<std::size_t>(K), kPad);
    auto push = [&](int t) {
        history.erase(history.begin());
        history.push_back(t);
    };
    for (unsigned char c : prompt) push(char_token(c));
    push(kSep);

    const bool sampled = params.mode == GenerationParams::Mode::SAMPLED;
    Rng rng(params.seed);
    std::vector<float> x(static_cast<std::size_t>(K * E + C + E)), h(static_cast<std::size_t>(H)), logits(kVocab);
    std::vector<double> probs(kVocab);
    std::vector<int> order(kVocab);
    std::string out;
    for (int step = 0; step < params.max_new_tokens; ++step) {
        step_logits(history.data(), conn.data(), pv.data(), x.data(), h.data(), logits.data());
        for (int t : {kPad, kSep, kUnk}) logits[static_cast<std::size_t>(t)] = -INFINITY;

        int next = kEos;
        if (!sampled) {
            next = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            const double temp = params.temperature;
            const float mx = *std::max_element(logits.begin(), logits.end());
            double z = 0.0;
            for (int v = 0; v < kVocab; ++v) {
                probs[static_cast<std::size_t>(v)] = std::exp((logits[static_cast<std::size_t>(v)] - mx) / temp);
                z += probs[static_cast<std::size_t>(v)];
            }
            for (auto& p : probs) p /= z;
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
            });
            std::size_t keep = kVocab;
            if (params.top_k) keep = std::min<std::size_t>(keep, static_cast<std::size_t>(*params.top_k));
            if (params.top_p) {
                double cum = 0.0;
                for (std::size_t i = 0; i < keep; ++i) {
                    cum += probs[static_cast<std::size_t>(order[i])];
                    if (cum >= *params.top_p) {
                        keep = i + 1;
                        break;
                    }
                }
            }
            double mass = 0.0;
            for (std::size_t i = 0; i < keep; ++i) mass += probs[static_cast<std::size_t>(order[i])];
            double u = rng.uniform() * mass;
            next = order[keep - 1];
            for (std::size_t i = 0; i < keep; ++i) {
                u -= probs[static_cast<std::size_t>(order[i])];
                if (u < 0) {
                    next = order[i];
                    break;
                }
            }
        }
        if (next == kEos) break;
        out.push_back(token_char(next));
        push(next);
    }
    return out;
}

}  // namespace ttw
