#pragma once

// Parameter layout of the active learner and the small building blocks
// (weight-normalized linear maps, LSTM cells) every module composes.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mal/core/autodiff.hpp"
#include "mal/core/errors.hpp"
#include "mal/core/params.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/task.hpp"

namespace mal {

enum class EncoderKind { mlp, conv, lookup };

inline const char* to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::mlp: return "mlp";
        case EncoderKind::conv: return "conv";
        case EncoderKind::lookup: return "lookup";
    }
    return "?";
}

struct ModelConfig {
    TaskKind task = TaskKind::classification;
    std::size_t num_classes = 5;
    RatingScale scale;

    EncoderKind encoder = EncoderKind::mlp;
    std::size_t input_dim = 16;     // mlp
    std::size_t mlp_hidden = 64;    // mlp
    std::size_t image_side = 28;    // conv, square grayscale
    std::size_t conv_filters = 64;  // conv
    std::size_t num_ids = 0;        // lookup rows

    // The default widths are not given by the method description; 64 matches the conv filter count.
    std::size_t embed_dim = 64;
    std::size_t enc_hidden = 64;
    std::size_t ctrl_hidden = 64;
    std::size_t read_dim = 64;
    std::size_t match_hidden = 64;
    std::size_t matching_steps = 3;

    bool layer_norm = true;
    double leaky_slope = 0.01;
    double cos_eps = 1e-8;
    double ln_eps = 1e-5;
    double gamma_log_clip = 12.0;  // |log gamma| bound, keeps gamma finite in 32-bit

    // Ablation switches (inference-time; parameters unchanged).
    bool use_gamma = true;
    bool use_ctx_encoder = true;

    std::uint64_t init_seed = 1;

    std::size_t label_dim() const { return task == TaskKind::classification ? num_classes : 1; }
    std::size_t select_feature_dim() const { return embed_dim + 6; }

    void validate() const {
        if (task == TaskKind::classification && num_classes < 2) throw ConfigError("num_classes", "must be at least 2");
        if (embed_dim < 1 || enc_hidden < 1 || ctrl_hidden < 1 || read_dim < 1 || match_hidden < 1)
            throw ConfigError("model dims", "all widths must be positive");
        if (matching_steps < 1) throw ConfigError("matching_steps", "must be at least 1");
        if (encoder == EncoderKind::mlp && (input_dim < 1 || mlp_hidden < 1))
            throw ConfigError("input_dim", "mlp encoder needs positive input/hidden widths");
        if (encoder == EncoderKind::conv && image_side < 4) throw ConfigError("image_side", "must be at least 4");
        if (encoder == EncoderKind::lookup && num_ids < 1) throw ConfigError("num_ids", "lookup table needs rows");
    }
};

// Indices into the parameter store for one weight-normalized affine map.
struct LinearRef {
    std::size_t v = 0, g = 0, b = 0;
    std::size_t in = 0, out = 0;
};

struct LstmRef {
    LinearRef wx, wh;
    bool layer_norm = false;
    std::size_t lnx_gain = 0, lnx_bias = 0, lnh_gain = 0, lnh_bias = 0, bias = 0;
    std::size_t hidden = 0;
};

struct ConvRef {
    LinearRef l1, l2, l3, fc;
    ad::ConvGeometry g1, g2, g3;
};

template <typename T>
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(derive_seed(cfg_.init_seed, 0x696e6974ULL));
        build(rng);
    }

    const ModelConfig& config() const noexcept { return cfg_; }
    ModelConfig& config() noexcept { return cfg_; }
    ParameterStore<T>& params() noexcept { return params_; }
    const ParameterStore<T>& params() const noexcept { return params_; }

    // context-free encoder
    LinearRef mlp1, mlp2;
    ConvRef conv;
    std::size_t lookup = 0;
    // context-sensitive encoder
    LstmRef enc_fwd, enc_bwd;
    LinearRef enc_out;  // W_e
    // controller
    LinearRef h0_map;
    LinearRef read;
    LstmRef ctrl;
    // selection
    LinearRef sel_b;  // W_b
    LinearRef sel_g;  // W_g
    std::size_t sel_w = 0;  // w_p
    // fast prediction
    LinearRef gamma;  // W_gamma
    // slow prediction
    LstmRef match;
    LinearRef match_out;  // W_m
    // critic
    LinearRef value_head;

    // ---- graph helpers --------------------------------------------------

    ad::Var<T> linear(ad::Tape<T>& tape, const LinearRef& l, ad::Var<T> x) const {
        return ad::wn_linear(x, tape.param(params_, l.v), tape.param(params_, l.g), tape.param(params_, l.b));
    }

    // One LSTM step over a batch of rows; returns {h, c}.
    std::pair<ad::Var<T>, ad::Var<T>> lstm(ad::Tape<T>& tape, const LstmRef& l, ad::Var<T> h_prev, ad::Var<T> c_prev,
                                           ad::Var<T> input) const {
        MAL_REQUIRE(input.cols() == l.wx.in && h_prev.cols() == l.hidden && c_prev.cols() == l.hidden,
                    "lstm_cell: dimension mismatch");
        ad::Var<T> ax = linear(tape, l.wx, input);
        ad::Var<T> ah = linear(tape, l.wh, h_prev);
        ad::Var<T> pre;
        if (l.layer_norm) {
            const T eps = static_cast<T>(cfg_.ln_eps);
            ax = ad::layer_norm(ax, tape.param(params_, l.lnx_gain), tape.param(params_, l.lnx_bias), eps);
            ah = ad::layer_norm(ah, tape.param(params_, l.lnh_gain), tape.param(params_, l.lnh_bias), eps);
            pre = ad::add(ad::add(ax, ah), tape.param(params_, l.bias));
        } else {
            pre = ad::add(ax, ah);
        }
        ad::Var<T> hc = ad::lstm_pointwise(pre, c_prev);
        return {ad::slice_cols(hc, 0, l.hidden), ad::slice_cols(hc, l.hidden, l.hidden)};
    }

    ad::Var<T> zeros(ad::Tape<T>& tape, std::size_t rows, std::size_t cols) const {
        return tape.constant(Tensor<T>(rows, cols));
    }

private:
    LinearRef add_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0) {
        LinearRef l;
        l.in = in;
        l.out = out;
        l.v = params_.add(name + ".v", random_normal<T>(out, in, 1.0, rng));
        l.g = params_.add(name + ".g", Tensor<T>(1, out, static_cast<T>(gain)));
        l.b = params_.add(name + ".b", Tensor<T>(1, out));
        return l;
    }

    LstmRef add_lstm(const std::string& name, std::size_t in, std::size_t hidden, bool ln, Rng& rng) {
        LstmRef l;
        l.hidden = hidden;
        l.layer_norm = ln;
        l.wx = add_linear(name + ".wx", in, 4 * hidden, rng);
        l.wh = add_linear(name + ".wh", hidden, 4 * hidden, rng);
        // forget-gate bias starts at 1
        if (!ln) {
            for (std::size_t j = hidden; j < 2 * hidden; ++j) params_[l.wx.b][j] = T(1);
        } else {
            l.lnx_gain = params_.add(name + ".lnx.gain", Tensor<T>(1, 4 * hidden, T(1)));
            l.lnx_bias = params_.add(name + ".lnx.bias", Tensor<T>(1, 4 * hidden));
            l.lnh_gain = params_.add(name + ".lnh.gain", Tensor<T>(1, 4 * hidden, T(1)));
            l.lnh_bias = params_.add(name + ".lnh.bias", Tensor<T>(1, 4 * hidden));
            Tensor<T> b(1, 4 * hidden);
            for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = T(1);
            l.bias = params_.add(name + ".bias", std::move(b));
        }
        return l;
    }

    void build(Rng& rng) {
        const auto d = cfg_.embed_dim;
        switch (cfg_.encoder) {
            case EncoderKind::mlp:
                mlp1 = add_linear("cf.mlp1", cfg_.input_dim, cfg_.mlp_hidden, rng);
                mlp2 = add_linear("cf.mlp2", cfg_.mlp_hidden, d, rng);
                break;
            case EncoderKind::conv: {
                const std::size_t f = cfg_.conv_filters;
                const std::size_t s = cfg_.image_side;
                conv.g1 = ad::ConvGeometry{1, s, s, 5, 2, 2};
                conv.g2 = ad::ConvGeometry{f, conv.g1.out_height(), conv.g1.out_width(), 5, 2, 2};
                conv.g3 = ad::ConvGeometry{f, conv.g2.out_height(), conv.g2.out_width(), 3, 1, 1};
                conv.l1 = add_linear("cf.conv1", conv.g1.patch(), f, rng);
                conv.l2 = add_linear("cf.conv2", conv.g2.patch(), f, rng);
                conv.l3 = add_linear("cf.conv3", conv.g3.patch(), f, rng);
                conv.fc = add_linear("cf.fc", f * conv.g3.out_height() * conv.g3.out_width(), d, rng);
                break;
            }
            case EncoderKind::lookup:
                lookup = params_.add("cf.table", random_normal<T>(cfg_.num_ids, d, 0.05, rng));
                break;
        }
        const auto he = cfg_.enc_hidden;
        enc_fwd = add_lstm("cs.fwd", d, he, false, rng);
        enc_bwd = add_lstm("cs.bwd", d + he, he, false, rng);
        enc_out = add_linear("cs.out", 2 * he, d, rng, 0.1);

        const auto H = cfg_.ctrl_hidden;
        h0_map = add_linear("ctrl.h0", he, H, rng);
        read = add_linear("read", d + cfg_.label_dim(), cfg_.read_dim, rng);
        ctrl = add_lstm("ctrl", cfg_.read_dim, H, cfg_.layer_norm, rng);

        sel_b = add_linear("sel.wb", H, d, rng);
        sel_g = add_linear("sel.wg", H, cfg_.select_feature_dim(), rng);
        sel_w = params_.add("sel.wp", random_normal<T>(1, cfg_.select_feature_dim(), 0.1, rng));

        gamma = add_linear("fast.wgamma", H, d, rng, 0.1);

        const auto hm = cfg_.match_hidden;
        match = add_lstm("slow.lstm", d + d + H, hm, cfg_.layer_norm, rng);
        match_out = add_linear("slow.wm", hm, d, rng, 0.1);

        value_head = add_linear("value", H, 1, rng, 0.1);
    }

    ModelConfig cfg_;
    ParameterStore<T> params_;
};

}  // namespace mal
