#include <gtest/gtest.h>

#include <cmath>

#include "mal/core/adam.hpp"
#include "mal/core/autodiff.hpp"
#include "mal/model/encoders.hpp"
#include "mal/model/policy.hpp"
#include "mal/model/predictors.hpp"
#include "mal/model/runner.hpp"
#include "support.hpp"

using namespace mal;
using T = double;

namespace {

// Zero effective weights: g = 0 keeps v's norm valid while W = 0.
void zero_linear(Model<T>& m, const LinearRef& l) {
    m.params()[l.g].fill(0);
    m.params()[l.b].fill(0);
}

void zero_lstm(Model<T>& m, const LstmRef& l) {
    zero_linear(m, l.wx);
    zero_linear(m, l.wh);
    if (l.layer_norm) m.params()[l.bias].fill(0);
}

}  // namespace

TEST(CoreOps, SumAndDotGradients) {
    ParameterStore<T> p;
    p.add("p", Tensor<T>::row({2, 0, -1}));
    {
        ad::Tape<T> tape;
        tape.backward(ad::sum(tape.param(p, 0)));
        const auto g = tape.parameter_gradients(p)[0];
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g[i], 1.0);
    }
    ad::Tape<T> tape;
    auto v = tape.param(p, 0);
    tape.backward(ad::sum(ad::mul(v, v)));
    const auto g = tape.parameter_gradients(p)[0];
    EXPECT_EQ(g[0], 4.0);
    EXPECT_EQ(g[1], 0.0);
    EXPECT_EQ(g[2], -2.0);
}

TEST(CoreOps, CrossEntropyGradientAtUniformLogits) {
    const double err = test::check_input_gradients({Tensor<T>(1, 4)}, [](ad::Tape<T>&, const auto& in) {
        return ad::softmax_cross_entropy(in[0], {0});
    });
    EXPECT_LT(err, 1e-6);
    ad::Tape<T> tape;
    auto x = tape.variable(Tensor<T>(1, 4));
    tape.backward(ad::softmax_cross_entropy(x, {0}));
    const auto& g = tape.grad(x.id);
    EXPECT_NEAR(g[0], -0.75, 1e-12);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(g[i], 0.25, 1e-12);
}

TEST(CoreOps, WeightNormIdentities) {
    Rng rng(5);
    auto v = test::random_tensor(3, 4, rng);
    Tensor<T> g(1, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        double n = 0;
        for (std::size_t i = 0; i < 4; ++i) n += v(j, i) * v(j, i);
        g[j] = std::sqrt(n);
    }
    auto x = test::random_tensor(2, 4, rng);
    ad::Tape<T> tape;
    auto y = ad::wn_linear(tape.constant(x), tape.constant(v), tape.constant(g), tape.constant(Tensor<T>(1, 3))).value();
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < 4; ++i) s += v(j, i) * x(r, i);
            EXPECT_NEAR(y(r, j), s, 1e-12);
        }
    const auto b = Tensor<T>::row({0.5, -1, 2});
    auto y0 = ad::wn_linear(tape.constant(Tensor<T>(1, 4)), tape.constant(v), tape.constant(g), tape.constant(b)).value();
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y0[j], b[j]);
}

TEST(CoreOps, WeightNormRejectsZeroRows) {
    ad::Tape<T> tape;
    EXPECT_THROW(ad::wn_linear(tape.constant(Tensor<T>(1, 2)), tape.constant(Tensor<T>(1, 2)),
                               tape.constant(Tensor<T>(1, 1, 1.0)), tape.constant(Tensor<T>(1, 1))),
                 NumericFault);
}

TEST(CoreOps, LayerNormDegenerateCases) {
    ad::Tape<T> tape;
    const auto bias = Tensor<T>::row({0.3, -0.2, 1.0});
    auto y = ad::layer_norm(tape.constant(Tensor<T>(1, 3, 7.0)), tape.constant(Tensor<T>(1, 3, 2.0)),
                            tape.constant(bias), 1e-5)
                 .value();
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(y[j], bias[j], 1e-12);
    auto z = ad::layer_norm(tape.constant(Tensor<T>::row({1, -1})), tape.constant(Tensor<T>(1, 2, 1.0)),
                            tape.constant(Tensor<T>(1, 2)), 1e-12)
                 .value();
    EXPECT_NEAR(z[0], 1.0, 1e-9);
    EXPECT_NEAR(z[1], -1.0, 1e-9);
}

TEST(CoreOps, CosineCases) {
    ad::Tape<T> tape;
    auto a = tape.constant(Tensor<T>(3, 2, std::vector<T>{1, 2, 0, 0, -2, 1}));
    auto b = tape.constant(Tensor<T>(1, 2, std::vector<T>{1, 2}));
    auto c = ad::cosine_matrix(a, b, 1e-8).value();
    EXPECT_NEAR(c(0, 0), 1.0, 1e-12);
    EXPECT_EQ(c(1, 0), 0.0);
    EXPECT_NEAR(c(2, 0), 0.0, 1e-15);
}

TEST(CoreOps, AdamZeroGradientAndQuadratic) {
    ParameterStore<T> p;
    p.add("w", Tensor<T>::row({1.5, -2}));
    AdamState<T> s;
    adam_step(p, {Tensor<T>(1, 2)}, s);
    EXPECT_EQ(p["w"][0], 1.5);
    EXPECT_EQ(p["w"][1], -2.0);

    ParameterStore<T> q;
    q.add("w", Tensor<T>::scalar(1.0));
    AdamState<T> st;
    st.hyper.lr = 0.1;
    double prev = 1.0;
    for (int k = 0; k < 2; ++k) {
        adam_step(q, {Tensor<T>::scalar(2 * q["w"][0])}, st);
        EXPECT_LT(q["w"][0], prev);
        prev = q["w"][0];
    }
}

TEST(Lstm, ZeroWeightsForceHalfGates) {
    auto cfg = test::tiny_config();
    cfg.layer_norm = false;
    Model<T> m(cfg);
    zero_lstm(m, m.ctrl);
    Rng rng(1);
    ad::Tape<T> tape;
    const auto c_prev = test::random_tensor(1, cfg.ctrl_hidden, rng);
    auto [h, c] = m.lstm(tape, m.ctrl, tape.constant(test::random_tensor(1, cfg.ctrl_hidden, rng)),
                         tape.constant(c_prev), tape.constant(test::random_tensor(1, cfg.read_dim, rng)));
    for (std::size_t j = 0; j < cfg.ctrl_hidden; ++j) {
        EXPECT_NEAR(c.value()[j], 0.5 * c_prev[j], 1e-12);
        EXPECT_NEAR(h.value()[j], 0.5 * std::tanh(0.5 * c_prev[j]), 1e-12);
    }
    auto [h0, c0] = m.lstm(tape, m.ctrl, m.zeros(tape, 1, cfg.ctrl_hidden), m.zeros(tape, 1, cfg.ctrl_hidden),
                           m.zeros(tape, 1, cfg.read_dim));
    for (std::size_t j = 0; j < cfg.ctrl_hidden; ++j) EXPECT_EQ(h0.value()[j], 0.0);
    EXPECT_THROW(m.lstm(tape, m.ctrl, m.zeros(tape, 1, 2), m.zeros(tape, 1, cfg.ctrl_hidden),
                        m.zeros(tape, 1, cfg.read_dim)),
                 ContractViolation);
}

TEST(Lstm, ControllerUpdateIsPure) {
    Model<T> m(test::tiny_config());
    Rng rng(2);
    ad::Tape<T> tape;
    ControlState<T> s{tape.constant(test::random_tensor(1, 6, rng)), tape.constant(test::random_tensor(1, 6, rng))};
    auto r = tape.constant(test::random_tensor(1, 5, rng));
    auto a = controller_update(tape, m, s, r);
    auto b = controller_update(tape, m, s, r);
    for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(a.h.value()[j], b.h.value()[j]);
        EXPECT_EQ(a.c.value()[j], b.c.value()[j]);
    }
}

TEST(Encoders, LookupReturnsTheTableRow) {
    auto cfg = test::tiny_config(TaskKind::regression, 1);
    cfg.encoder = EncoderKind::lookup;
    cfg.num_ids = 6;
    Model<T> m(cfg);
    ad::Tape<T> tape;
    Item it;
    it.id = 3;
    auto x = encode_context_free(tape, m, {it}).value();
    for (std::size_t k = 0; k < cfg.embed_dim; ++k) EXPECT_EQ(x[k], m.params()[m.lookup](3, k));
}

TEST(Encoders, ZeroWeightMlpOutputsLeakyBias) {
    auto cfg = test::tiny_config();
    Model<T> m(cfg);
    zero_linear(m, m.mlp1);
    zero_linear(m, m.mlp2);
    auto& b = m.params()[m.mlp2.b];
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = k % 2 ? 0.7 : -0.4;
    Rng rng(3);
    std::vector<Item> items(3);
    for (auto& it : items)
        for (int j = 0; j < 4; ++j) it.features.push_back(static_cast<float>(std::normal_distribution<>(0, 1)(rng)));
    ad::Tape<T> tape;
    auto x = encode_context_free(tape, m, items).value();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t k = 0; k < b.size(); ++k) EXPECT_NEAR(x(i, k), b[k] > 0 ? b[k] : 0.01 * b[k], 1e-15);
}

TEST(Encoders, ConvTrunkEndsInSevenBySevenBySixtyFour) {
    auto cfg = test::tiny_config();
    cfg.encoder = EncoderKind::conv;
    cfg.image_side = 28;
    cfg.conv_filters = 64;
    Model<T> m(cfg);
    EXPECT_EQ(m.conv.g3.out_height(), 7u);
    EXPECT_EQ(m.conv.g3.out_width(), 7u);
    std::vector<Item> items(2);
    for (auto& it : items) it.features.assign(28 * 28, 0.5f);
    ad::Tape<T> tape(false);
    auto images = tape.constant(feature_matrix<T>(items, 28 * 28));
    auto fmap = conv_feature_map(tape, m, images);
    EXPECT_EQ(fmap.rows(), 2u);
    EXPECT_EQ(fmap.cols(), 7u * 7u * 64u);
}

TEST(Encoders, ZeroResidualMapKeepsContextFreeEmbedding) {
    Model<T> m(test::tiny_config());
    zero_linear(m, m.enc_out);
    Rng rng(4);
    ad::Tape<T> tape;
    auto x = tape.constant(test::random_tensor(4, 5, rng));
    auto cs = encode_context_sensitive(tape, m, x, visitation_order(4, 9));
    for (std::size_t i = 0; i < x.value().size(); ++i) EXPECT_EQ(cs.embeddings.value()[i], x.value()[i]);
}

TEST(Encoders, SingleItemWithZeroLstmWeights) {
    Model<T> m(test::tiny_config());
    zero_lstm(m, m.enc_fwd);
    zero_lstm(m, m.enc_bwd);
    Rng rng(5);
    ad::Tape<T> tape;
    auto x = tape.constant(test::random_tensor(1, 5, rng));
    auto cs = encode_context_sensitive(tape, m, x, {0});
    // Zero state and zero weights: both directions give h = 0, so x'' = x' + b_e.
    const auto& be = m.params()[m.enc_out.b];
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(cs.embeddings.value()[k], x.value()[k] + be[k], 1e-15);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(cs.final_state.value()[k], 0.0);
}

TEST(Encoders, SeededOrderIsReproducible) {
    Model<T> m(test::tiny_config());
    Rng rng(6);
    const auto x = test::random_tensor(6, 5, rng);
    auto run = [&](std::uint64_t seed) {
        ad::Tape<T> tape(false);
        return encode_context_sensitive(tape, m, tape.constant(x), visitation_order(6, seed)).embeddings.value();
    };
    const auto a = run(1), b = run(1), c = run(2);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i], b[i]);
        differs |= a[i] != c[i];
    }
    EXPECT_TRUE(differs);
}

TEST(Encoders, PermutingStorageWithFixedVisitsIsCovariant) {
    Model<T> m(test::tiny_config());
    Rng rng(7);
    const auto x = test::random_tensor(5, 5, rng);
    const std::vector<std::size_t> visit{3, 0, 4, 1, 2};
    const std::vector<std::size_t> perm{2, 4, 0, 1, 3};  // new row k holds old row perm[k]
    Tensor<T> xp(5, 5);
    std::vector<std::size_t> where(5);
    for (std::size_t k = 0; k < 5; ++k) {
        where[perm[k]] = k;
        for (std::size_t j = 0; j < 5; ++j) xp(k, j) = x(perm[k], j);
    }
    std::vector<std::size_t> visit_p;
    for (auto i : visit) visit_p.push_back(where[i]);
    ad::Tape<T> tape(false);
    const auto a = encode_context_sensitive(tape, m, tape.constant(x), visit).embeddings.value();
    const auto b = encode_context_sensitive(tape, m, tape.constant(xp), visit_p).embeddings.value();
    for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(b(k, j), a(perm[k], j), 1e-12);
}

TEST(Read, ZeroTransformGivesBias) {
    Model<T> m(test::tiny_config());
    zero_linear(m, m.read);
    auto& b = m.params()[m.read.b];
    for (std::size_t k = 0; k < b.size(); ++k) b[k] = 0.1 * static_cast<double>(k) - 0.2;
    Rng rng(8);
    ad::Tape<T> tape;
    auto r = read_item(tape, m, tape.constant(test::random_tensor(1, 5, rng)), Label::of_class(1)).value();
    for (std::size_t k = 0; k < b.size(); ++k) EXPECT_EQ(r[k], b[k]);
}

TEST(Read, LabelEncodings) {
    auto cfg = test::tiny_config(TaskKind::classification, 3);
    const auto e = read_label_encoding<T>(cfg, Label::of_class(1));
    EXPECT_EQ(e.cols(), 3u);
    EXPECT_EQ(e[0], 0.0);
    EXPECT_EQ(e[1], 1.0);
    EXPECT_EQ(e[2], 0.0);
    auto rc = test::tiny_config(TaskKind::regression, 1);
    EXPECT_EQ(read_label_encoding<T>(rc, Label::of_rating(5.0))[0], 1.0);
    EXPECT_EQ(read_label_encoding<T>(rc, Label::of_rating(0.5))[0], -1.0);
    EXPECT_EQ(read_label_encoding<T>(rc, Label::of_rating(2.75))[0], 0.0);
}

TEST(Read, ZeroWeightControllerFollowsTheForcedLstmFormula) {
    auto cfg = test::tiny_config();
    cfg.layer_norm = false;
    Model<T> m(cfg);
    zero_lstm(m, m.ctrl);
    Rng rng(9);
    ad::Tape<T> tape;
    const auto c = test::random_tensor(1, 6, rng);
    ControlState<T> s{tape.constant(test::random_tensor(1, 6, rng)), tape.constant(c)};
    auto out = controller_update(tape, m, s, tape.constant(test::random_tensor(1, 5, rng)));
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(out.h.value()[j], 0.5 * std::tanh(0.5 * c[j]), 1e-12);
}

TEST(ItemItem, FeatureCases) {
    ad::Tape<T> tape;
    // Items 0, 1; cos(0, 1) = 0.5.
    auto sim2 = tape.constant(Tensor<T>(2, 2, std::vector<T>{1, 0.5, 0.5, 1}));
    SupportPartition p2(2);
    auto f = item_item_features(sim2, {0}, p2).value();
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(f[k], 0.0);
    for (std::size_t k = 3; k < 6; ++k) EXPECT_EQ(f[k], 0.5);

    Tensor<T> eye(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1;
    SupportPartition p3(3);
    auto g = item_item_features(tape.constant(eye), {0, 1, 2}, p3).value();
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(g(r, k), 0.0);
}

TEST(Select, ZeroControllerGivesEqualProbabilityToIdenticalItems) {
    Model<T> m(test::tiny_config());
    zero_linear(m, m.sel_b);
    zero_linear(m, m.sel_g);
    ad::Tape<T> tape;
    Rng rng(10);
    auto row = test::random_tensor(1, 5, rng);
    Tensor<T> x(4, 5);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) x(i, j) = row[j];
    auto emb = tape.constant(x);
    auto sim = ad::cosine_matrix(emb, emb, 1e-8);
    SupportPartition part(4);
    part.reveal(2);
    auto sel = select_item(tape, m, emb, sim, part, tape.constant(test::random_tensor(1, 6, rng)), SelectMode::argmax,
                           nullptr);
    for (std::size_t k = 0; k < 6 + 5; ++k) EXPECT_EQ(sel.gate[k], 0.5);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(sel.probabilities[k], 1.0 / 3, 1e-12);
}

TEST(Select, EqualLogitsAreUniform) {
    Model<T> m(test::tiny_config());
    m.params()[m.sel_w].fill(0);
    Rng rng(11);
    ad::Tape<T> tape;
    auto emb = tape.constant(test::random_tensor(5, 5, rng));
    auto sim = ad::cosine_matrix(emb, emb, 1e-8);
    SupportPartition part(5);
    auto sel = select_item(tape, m, emb, sim, part, tape.constant(test::random_tensor(1, 6, rng)), SelectMode::argmax,
                           nullptr);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_NEAR(sel.probabilities[k], 0.2, 1e-12);
}

TEST(Fast, TwoEquidistantKnownItemsAverageTheirLabels) {
    Model<T> m(test::tiny_config());
    ad::Tape<T> tape;
    // Unknown item 0 sits between known items 1 and 2.
    auto emb = tape.constant(Tensor<T>(3, 5, std::vector<T>{1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0}));
    auto sim = ad::cosine_matrix(emb, emb, 1e-8);
    SupportPartition part(3);
    part.reveal(1);
    part.reveal(2);
    auto labels = prediction_label_matrix<T>(m.config(), {Label::of_class(0), Label::of_class(2)});
    Rng rng(12);
    auto fp = fast_predict(tape, m, emb, sim, part, labels, tape.constant(test::random_tensor(1, 6, rng)));
    EXPECT_NEAR(fp.attention.value()(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(fp.prediction.value()(0, 0), 0.5, 1e-12);
    EXPECT_NEAR(fp.prediction.value()(0, 2), 0.5, 1e-12);
}

TEST(Fast, VanishingGammaIsUniform) {
    auto cfg = test::tiny_config();
    cfg.gamma_log_clip = 40;
    Model<T> m(cfg);
    // gamma = exp(x''ᵀ W_gamma h): a large negative score drives it to ~1e-6.
    zero_linear(m, m.gamma);
    auto& b = m.params()[m.gamma.b];
    ad::Tape<T> tape;
    auto emb = tape.constant(Tensor<T>(4, 5, std::vector<T>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0.2, 1, 0, 0, 0, -1, 0.3, 1, 0, 0}));
    auto sim = ad::cosine_matrix(emb, emb, 1e-8);
    b.fill(0);
    b[0] = std::log(1e-6);  // score = x''_0 * b_0 = log(1e-6) for the unknown item 0
    SupportPartition part(4);
    part.reveal(1);
    part.reveal(2);
    part.reveal(3);
    auto labels = prediction_label_matrix<T>(m.config(), {Label::of_class(0), Label::of_class(1), Label::of_class(2)});
    auto fp = fast_predict(tape, m, emb, sim, part, labels, m.zeros(tape, 1, 6));
    EXPECT_NEAR(fp.gamma[0], 1e-6, 1e-12);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(fp.attention.value()(0, j), 1.0 / 3, 1e-4);
}

TEST(Fast, EqualCosinesGiveUniformAttentionForAnyGamma) {
    Model<T> m(test::tiny_config());
    ad::Tape<T> tape;
    Tensor<T> s(4, 4, 0.3);
    for (std::size_t i = 0; i < 4; ++i) s(i, i) = 1;
    Rng rng(13);
    auto emb = tape.constant(test::random_tensor(4, 5, rng));
    SupportPartition part(4);
    part.reveal(0);
    part.reveal(3);
    auto labels = prediction_label_matrix<T>(m.config(), {Label::of_class(0), Label::of_class(1)});
    auto fp = fast_predict(tape, m, emb, tape.constant(s), part, labels, tape.constant(test::random_tensor(1, 6, rng)));
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(fp.attention.value()(r, j), 0.5, 1e-12);
}

TEST(Slow, ZeroMatchingWeightsReduceToOneAttentionStep) {
    Model<T> m(test::tiny_config());
    zero_lstm(m, m.match);
    zero_linear(m, m.match_out);
    Rng rng(14);
    ad::Tape<T> tape;
    auto eval = tape.constant(test::random_tensor(3, 5, rng));
    auto support = tape.constant(test::random_tensor(4, 5, rng));
    SupportPartition part(4);
    part.reveal(2);
    part.reveal(0);
    auto labels = prediction_label_matrix<T>(m.config(), {Label::of_class(1), Label::of_class(2)});
    auto sp = slow_predict(tape, m, eval, support, part, labels, tape.constant(test::random_tensor(1, 6, rng)));
    auto att = ad::softmax_rows(ad::cosine_matrix(eval, ad::gather_rows(support, part.known()), 1e-8)).value();
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(sp.prediction.value()(i, 1), att(i, 0), 1e-12);
        EXPECT_NEAR(sp.prediction.value()(i, 2), att(i, 1), 1e-12);
        EXPECT_EQ(sp.prediction.value()(i, 0), 0.0);
    }
}

TEST(Slow, InvariantToKnownSetOrder) {
    Model<T> m(test::tiny_config());
    Rng rng(15);
    ad::Tape<T> tape(false);
    auto eval = tape.constant(test::random_tensor(2, 5, rng));
    auto support = tape.constant(test::random_tensor(5, 5, rng));
    auto h = tape.constant(test::random_tensor(1, 6, rng));
    const std::vector<Label> y{Label::of_class(0), Label::of_class(1), Label::of_class(2)};
    SupportPartition a(5), b(5);
    for (auto i : {0, 3, 4}) a.reveal(static_cast<std::size_t>(i));
    for (auto i : {4, 0, 3}) b.reveal(static_cast<std::size_t>(i));
    const std::vector<Label> yb{y[2], y[0], y[1]};
    auto pa = slow_predict(tape, m, eval, support, a, prediction_label_matrix<T>(m.config(), y), h).prediction.value();
    auto pb = slow_predict(tape, m, eval, support, b, prediction_label_matrix<T>(m.config(), yb), h).prediction.value();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_NEAR(pa[i], pb[i], 1e-9);
}

TEST(Rewards, WorkedValues) {
    ad::Tape<T> tape;
    auto uniform = tape.constant(Tensor<T>(1, 5, 0.2));
    EXPECT_NEAR(prediction_reward(tape, uniform, {Label::of_class(3)}, TaskKind::classification).mean.value().item(),
                -1.6094379, 1e-6);
    auto onehot = tape.constant(Tensor<T>::row({0, 1, 0}));
    EXPECT_EQ(prediction_reward(tape, onehot, {Label::of_class(1)}, TaskKind::classification).mean.value().item(), 0.0);
    auto y = tape.constant(Tensor<T>::scalar(3.0));
    EXPECT_EQ(prediction_reward(tape, y, {Label::of_rating(4.0)}, TaskKind::regression).mean.value().item(), -1.0);
    EXPECT_EQ(score_predictions(y.value(), {Label::of_rating(4.0)}, TaskKind::regression).rmse, 1.0);
    EXPECT_THROW(prediction_reward(tape, onehot, {Label::of_class(3)}, TaskKind::classification), ContractViolation);
}
