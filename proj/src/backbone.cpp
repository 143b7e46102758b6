#include "camoseg/backbone.hpp"

#include <cmath>
#include <fstream>

#include "camoseg/kernels.hpp"
#include "camoseg/rng.hpp"

namespace camoseg::backbone {

DiffusionSchedule DiffusionSchedule::linear(int64_t num_steps) {
    DiffusionSchedule s;
    s.num_steps = num_steps;
    for (int64_t t = 0; t < num_steps; ++t) {
        const double a = num_steps > 1 ? 1.0 - static_cast<double>(t) / static_cast<double>(num_steps - 1) : 1.0;
        s.alphas.push_back(a);
        s.sigmas.push_back(std::sqrt(std::max(0.0, 1.0 - a * a)));
    }
    return s;
}

void DiffusionSchedule::validate() const {
    if (static_cast<int64_t>(alphas.size()) != num_steps || static_cast<int64_t>(sigmas.size()) != num_steps)
        throw ConfigError("diffusion schedule: length mismatch");
    for (int64_t t = 0; t < num_steps; ++t) {
        if (alphas[t] < 0.0 || alphas[t] > 1.0 || sigmas[t] < 0.0 || sigmas[t] > 1.0)
            throw ConfigError("diffusion schedule: entries must lie in [0,1]");
        if (alphas[t] * alphas[t] + sigmas[t] * sigmas[t] > 1.0 + 1e-6)
            throw ConfigError("diffusion schedule: not variance preserving");
    }
}

Tensor noise_latent(const Tensor& z, int64_t t, const Tensor& eps, const DiffusionSchedule& schedule) {
    if (t < 0 || t >= schedule.num_steps) throw RangeError("noise_latent: timestep out of range");
    check_same_shape(z, eps, "noise_latent");
    Tensor out = z;
    const double a = schedule.alphas[t], s = schedule.sigmas[t];
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a * z[i] + s * eps[i];
    return out;
}

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * scale;
    return t;
}

Tensor conv_relu(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, bool relu) {
    const int64_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
    Tensor y({cout, (h + stride - 1) / stride, (wd + stride - 1) / stride});
    kernels::conv3x3(x.data(), w.data(), b.data(), y.data(), cin, cout, h, wd, stride);
    if (relu)
        for (int64_t i = 0; i < y.size(); ++i) y[i] = std::max(0.0, y[i]);
    return y;
}

}  // namespace

ToyBackbone::ToyBackbone(const BackboneConfig& cfg, DiffusionSchedule schedule)
    : cfg_(cfg), schedule_(std::move(schedule)) {
    schedule_.validate();
    if (cfg_.channels.size() != 3) throw ConfigError("backbone: expected 3 channel counts");
    timestep_ = cfg_.timestep >= 0 ? cfg_.timestep : schedule_.num_steps / 2;
    if (timestep_ < 0 || timestep_ >= schedule_.num_steps) throw ConfigError("backbone: default timestep out of range");

    Rng rng(Rng::derive(cfg_.seed, 0xbacb, 0));
    const int64_t c8 = cfg_.channels[0], c16 = cfg_.channels[1], c32 = cfg_.channels[2];
    auto he = [](int64_t fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); };

    // stem: three stride-2 convs, full res -> 1/8
    const int64_t mid = std::max<int64_t>(8, c8 / 2);
    stem_.push_back({random_tensor({mid, 3, 3, 3}, rng, he(27)), random_tensor({mid}, rng, 0.05)});
    stem_.push_back({random_tensor({c8, mid, 3, 3}, rng, he(mid * 9)), random_tensor({c8}, rng, 0.05)});
    stem_.push_back({random_tensor({c8, c8, 3, 3}, rng, he(c8 * 9)), random_tensor({c8}, rng, 0.05)});
    stage16_ = {random_tensor({c16, c8, 3, 3}, rng, he(c8 * 9)), random_tensor({c16}, rng, 0.05)};
    stage32_ = {random_tensor({c32, c16, 3, 3}, rng, he(c16 * 9)), random_tensor({c32}, rng, 0.05)};
    decoder_ = {random_tensor({cfg_.decoder_channels, c32, 3, 3}, rng, he(c32 * 9)),
                random_tensor({cfg_.decoder_channels}, rng, 0.05)};

    const int64_t d_attn = 16;
    const int64_t dt = cfg_.caption_dim;
    const int64_t level_channels[3] = {c8, c16, c32};
    CaptionGate* gates[3] = {&gate8_, &gate16_, &gate32_};
    for (int lvl = 0; lvl < 3; ++lvl) {
        const int64_t c = level_channels[lvl];
        *gates[lvl] = {random_tensor({d_attn, c}, rng, 1.0 / std::sqrt(static_cast<double>(c))),
                       random_tensor({d_attn, dt}, rng, 1.0 / std::sqrt(static_cast<double>(dt))),
                       random_tensor({c, dt}, rng, 1.0 / std::sqrt(static_cast<double>(dt)))};
        time_embed_.push_back(random_tensor({c}, rng, 0.1));
    }
    caption_proj_ = random_tensor({dt, 192}, rng, 1.0 / std::sqrt(192.0));
}

CaptionEmbedding ToyBackbone::implicit_caption(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) < 1 || image.dim(2) < 1)
        throw ShapeError("implicit_caption: image must be [3,H,W] and nonempty");
    // 8x8 area-pooled color statistics as the image descriptor
    Tensor stats({192});
    const int64_t h = image.dim(1), w = image.dim(2);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t gy = 0; gy < 8; ++gy)
            for (int64_t gx = 0; gx < 8; ++gx) {
                const int64_t y0 = gy * h / 8, y1 = std::max(y0 + 1, (gy + 1) * h / 8);
                const int64_t x0 = gx * w / 8, x1 = std::max(x0 + 1, (gx + 1) * w / 8);
                double s = 0.0;
                for (int64_t y = y0; y < y1; ++y)
                    for (int64_t x = x0; x < x1; ++x) s += image.at(c, y, x);
                stats[(c * 8 + gy) * 8 + gx] = s / static_cast<double>((y1 - y0) * (x1 - x0));
            }
    const int64_t dt = cfg_.caption_dim;
    Tensor v({dt});
    kernels::matmul(caption_proj_.data(), stats.data(), v.data(), dt, 192, 1);
    double norm2 = 0.0;
    for (int64_t i = 0; i < dt; ++i) {
        v[i] = std::tanh(v[i]);
        norm2 += v[i] * v[i];
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
    for (int64_t i = 0; i < dt; ++i) v[i] *= inv;
    return {v};
}

Tensor ToyBackbone::run_caption_gate(const Tensor& feat, const CaptionGate& gate, const Tensor& caption) const {
    // single-head cross-attention with the caption as the only key/value:
    // out_p = f_p + sigmoid(<Wq f_p, Wk c>/sqrt(d)) * (Wv c)
    const int64_t c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
    const int64_t d = gate.wq.dim(0), dt = gate.wk.dim(1);
    Tensor key({d});
    kernels::matmul(gate.wk.data(), caption.data(), key.data(), d, dt, 1);
    Tensor val({c});
    kernels::matmul(gate.wv.data(), caption.data(), val.data(), c, dt, 1);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out = feat;
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            double logit = 0.0;
            for (int64_t dd = 0; dd < d; ++dd) {
                double q = 0.0;
                for (int64_t ch = 0; ch < c; ++ch) q += gate.wq.at(dd, ch) * feat.at(ch, y, x);
                logit += q * key[dd];
            }
            logit *= inv_sqrt;
            const double a = 1.0 / (1.0 + std::exp(-logit));
            for (int64_t ch = 0; ch < c; ++ch) out.at(ch, y, x) += a * val[ch];
        }
    return out;
}

FeaturePyramid ToyBackbone::extract_features(const Tensor& image, const CaptionEmbedding& caption,
                                             int64_t t) const {
    if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("extract_features: image must be [3,H,W]");
    if (t < 0 || t >= schedule_.num_steps) throw RangeError("extract_features: timestep out of range");
    if (caption.vector.size() != cfg_.caption_dim) throw ConfigError("extract_features: caption dimension mismatch");

    Tensor x = image;
    for (size_t i = 0; i < stem_.size(); ++i) x = conv_relu(x, stem_[i].w, stem_[i].b, 2, true);
    const double at = schedule_.alphas[t];
    auto add_time = [&](Tensor& f, const Tensor& emb) {
        const int64_t hw = f.dim(1) * f.dim(2);
        for (int64_t c = 0; c < f.dim(0); ++c)
            for (int64_t i = 0; i < hw; ++i) f[c * hw + i] += at * emb[c];
    };
    add_time(x, time_embed_[0]);
    Tensor l8 = run_caption_gate(x, gate8_, caption.vector);

    Tensor x16 = conv_relu(l8, stage16_.w, stage16_.b, 2, true);
    add_time(x16, time_embed_[1]);
    Tensor l16 = run_caption_gate(x16, gate16_, caption.vector);

    Tensor x32 = conv_relu(l16, stage32_.w, stage32_.b, 2, true);
    add_time(x32, time_embed_[2]);
    Tensor l32 = run_caption_gate(x32, gate32_, caption.vector);

    // one-layer upsampling decoder back to 1/8
    Tensor up({l32.dim(0), l8.dim(1), l8.dim(2)});
    kernels::bilinear_resize(l32.data(), up.data(), l32.dim(0), l32.dim(1), l32.dim(2), l8.dim(1), l8.dim(2));
    Tensor dec = conv_relu(up, decoder_.w, decoder_.b, 1, false);

    FeaturePyramid p;
    p.level8 = std::move(l8);
    p.level16 = std::move(l16);
    p.level32 = std::move(l32);
    p.decoder_final = std::move(dec);
    if (p.level8.dim(0) != cfg_.channels[0] || p.level16.dim(0) != cfg_.channels[1] ||
        p.level32.dim(0) != cfg_.channels[2] || p.decoder_final.dim(0) != cfg_.decoder_channels)
        throw ConfigError("extract_features: channel spec mismatch");
    return p;
}

std::vector<Tensor*> ToyBackbone::weight_tensors() {
    std::vector<Tensor*> w;
    for (auto& c : stem_) {
        w.push_back(&c.w);
        w.push_back(&c.b);
    }
    w.push_back(&stage16_.w);
    w.push_back(&stage32_.w);
    w.push_back(&decoder_.w);
    w.push_back(&caption_proj_);
    return w;
}

void ToyBackbone::save_weights(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write backbone weights: " + path);
    auto dump = [&](const Tensor& t) {
        const int64_t n = t.size();
        f.write(reinterpret_cast<const char*>(&n), sizeof(n));
        f.write(reinterpret_cast<const char*>(t.data()), n * sizeof(double));
    };
    for (const auto& c : stem_) {
        dump(c.w);
        dump(c.b);
    }
    dump(stage16_.w);
    dump(stage16_.b);
    dump(stage32_.w);
    dump(stage32_.b);
    dump(decoder_.w);
    dump(decoder_.b);
    for (const auto* g : {&gate8_, &gate16_, &gate32_}) {
        dump(g->wq);
        dump(g->wk);
        dump(g->wv);
    }
    for (const auto& e : time_embed_) dump(e);
    dump(caption_proj_);
}

void ToyBackbone::load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read backbone weights: " + path);
    auto slurp = [&](Tensor& t) {
        int64_t n = 0;
        f.read(reinterpret_cast<char*>(&n), sizeof(n));
        if (!f || n != t.size()) throw ConfigError("backbone weights do not match the declared channel spec");
        f.read(reinterpret_cast<char*>(t.data()), n * sizeof(double));
    };
    for (auto& c : stem_) {
        slurp(c.w);
        slurp(c.b);
    }
    slurp(stage16_.w);
    slurp(stage16_.b);
    slurp(stage32_.w);
    slurp(stage32_.b);
    slurp(decoder_.w);
    slurp(decoder_.b);
    for (auto* g : {&gate8_, &gate16_, &gate32_}) {
        slurp(g->wq);
        slurp(g->wk);
        slurp(g->wv);
    }
    for (auto& e : time_embed_) slurp(e);
    slurp(caption_proj_);
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& cfg, int64_t schedule_steps) {
    auto bb = std::make_unique<ToyBackbone>(cfg, DiffusionSchedule::linear(schedule_steps));
    if (cfg.kind == "toy") return bb;
    if (cfg.kind == "adapter") {
        if (cfg.weights_path.empty()) throw ConfigError("backbone.kind=adapter requires backbone.weights_path");
        bb->load_weights(cfg.weights_path);
        return bb;
    }
    throw ConfigError("backbone.kind must be 'toy' or 'adapter', got '" + cfg.kind + "'");
}

}  // namespace camoseg::backbone
