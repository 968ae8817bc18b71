#pragma once

// Shared fixtures for the unit and acceptance tests: central finite
// differences, small model configurations, episode helpers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mal/core/autodiff.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/model/model.hpp"
#include "mal/model/runner.hpp"

namespace mal::test {

// ||a - n|| / max(||a||, ||n||), with a floor so all-zero gradients compare equal.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n, double floor = 1e-10) {
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - n[i]) * (a[i] - n[i]);
        na += a[i] * a[i];
        nn += n[i] * n[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

struct GradReport {
    std::string worst_name;
    double worst = 0;
    std::size_t checked = 0;
};

using LossFn = std::function<ad::Var<double>(ad::Tape<double>&)>;

// Analytic parameter gradients against central differences, one tensor at a time.
inline GradReport check_parameter_gradients(ParameterStore<double>& params, const LossFn& loss, double h = 1e-6,
                                            std::size_t max_per_tensor = 0) {
    GradReport rep;
    ad::Tape<double> tape;
    auto l = loss(tape);
    tape.backward(l);
    const auto analytic = tape.parameter_gradients(params);
    auto eval = [&] {
        ad::Tape<double> t(false);
        return loss(t).value().item();
    };
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& w = params[p].data();
        const std::size_t n = max_per_tensor ? std::min(max_per_tensor, w.size()) : w.size();
        std::vector<double> a(n), num(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double keep = w[i];
            w[i] = keep + h;
            const double up = eval();
            w[i] = keep - h;
            const double down = eval();
            w[i] = keep;
            num[i] = (up - down) / (2 * h);
            a[i] = analytic[p][i];
        }
        const double e = relative_error(a, num);
        ++rep.checked;
        if (e > rep.worst) {
            rep.worst = e;
            rep.worst_name = params.name(p);
        }
    }
    return rep;
}

using InputLossFn = std::function<ad::Var<double>(ad::Tape<double>&, const std::vector<ad::Var<double>>&)>;

// Same check for free input tensors.
inline double check_input_gradients(std::vector<Tensor<double>> inputs, const InputLossFn& loss, double h = 1e-6) {
    ad::Tape<double> tape;
    std::vector<ad::Var<double>> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    auto l = loss(tape, vars);
    tape.backward(l);
    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> a(inputs[k].size()), num(inputs[k].size());
        const auto& g = tape.grad(vars[k].id);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            a[i] = g[i];
            const double keep = inputs[k][i];
            auto eval = [&](double v) {
                inputs[k][i] = v;
                ad::Tape<double> t(false);
                std::vector<ad::Var<double>> vs;
                for (const auto& x : inputs) vs.push_back(t.constant(x));
                return loss(t, vs).value().item();
            };
            num[i] = (eval(keep + h) - eval(keep - h)) / (2 * h);
            inputs[k][i] = keep;
        }
        worst = std::max(worst, relative_error(a, num));
    }
    return worst;
}

inline Tensor<double> random_tensor(std::size_t r, std::size_t c, Rng& rng, double sd = 1.0) {
    return random_normal<double>(r, c, sd, rng);
}

// Every width at most 8 so finite differences over the whole model stay cheap.
inline ModelConfig tiny_config(TaskKind kind = TaskKind::classification, std::size_t classes = 3) {
    ModelConfig c;
    c.task = kind;
    c.num_classes = classes;
    c.encoder = EncoderKind::mlp;
    c.input_dim = 4;
    c.mlp_hidden = 6;
    c.embed_dim = 5;
    c.enc_hidden = 4;
    c.ctrl_hidden = 6;
    c.read_dim = 5;
    c.match_hidden = 4;
    c.matching_steps = 3;
    return c;
}

inline TaskSpec tiny_classification(std::size_t classes = 3, std::size_t per_class = 2, std::size_t budget = 3) {
    TaskSpec s;
    s.kind = TaskKind::classification;
    s.num_classes = classes;
    s.support_per_class = per_class;
    s.eval_per_class = 1;
    s.feature_dim = 4;
    s.budget = budget;
    return s;
}

inline TaskSpec tiny_ratings(std::size_t support = 6, std::size_t eval = 3, std::size_t budget = 3) {
    TaskSpec s;
    s.kind = TaskKind::regression;
    s.support_size = support;
    s.eval_size = eval;
    s.num_movies = 30;
    s.budget = budget;
    return s;
}

// The ratings variant of tiny_config, with ids as features.
inline ModelConfig tiny_config_for(const EpisodeSource& source) {
    ModelConfig c = tiny_config(source.spec().kind, source.spec().num_classes);
    source.configure(c);
    return c;
}

struct InvariantReport {
    std::size_t instances = 0;
    std::size_t distribution_violations = 0;  // mass off 1 or support != unknown set
    std::size_t fast_violations = 0;          // fast prediction outside the revealed-label hull
    std::size_t slow_violations = 0;
    std::string first_failure;
    std::size_t violations() const { return distribution_violations + fast_violations + slow_violations; }
};

namespace detail {

// Classification rows must lie on the simplex with mass only on revealed
// classes; regression rows within [min, max] of the revealed ratings.
inline bool inside_hull(const Tensor<double>& pred, const std::vector<Label>& revealed, TaskKind kind) {
    if (kind == TaskKind::classification) {
        std::vector<bool> seen(pred.cols(), false);
        for (const auto& y : revealed) seen[static_cast<std::size_t>(y.cls)] = true;
        for (std::size_t r = 0; r < pred.rows(); ++r) {
            double total = 0;
            for (std::size_t c = 0; c < pred.cols(); ++c) {
                const double p = pred(r, c);
                if (p < 0 || (!seen[c] && p != 0)) return false;
                total += p;
            }
            if (std::abs(total - 1) > 1e-9) return false;
        }
        return true;
    }
    double lo = revealed.front().rating, hi = lo;
    for (const auto& y : revealed) {
        lo = std::min(lo, y.rating);
        hi = std::max(hi, y.rating);
    }
    for (std::size_t r = 0; r < pred.rows(); ++r)
        if (pred(r, 0) < lo - 1e-9 || pred(r, 0) > hi + 1e-9) return false;
    return true;
}

}  // namespace detail

// Randomized model widths, tasks and partially revealed pools; checks every
// selection distribution and every fast and slow prediction.
inline InvariantReport check_distribution_invariants(std::size_t instances, std::uint64_t seed) {
    InvariantReport rep;
    Rng rng(seed);
    auto uni = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto note = [&](const std::string& what) {
        if (rep.first_failure.empty()) rep.first_failure = what;
    };
    while (rep.instances < instances) {
        const bool cls = uni(0, 1) == 0;
        TaskSpec spec;
        if (cls) {
            spec.kind = TaskKind::classification;
            spec.num_classes = uni(2, 5);
            spec.support_per_class = uni(1, 4);
            spec.feature_dim = uni(2, 6);
            spec.sigma_cluster = std::uniform_real_distribution<double>(0, 1)(rng);
        } else {
            spec.kind = TaskKind::regression;
            spec.support_size = uni(3, 12);
            spec.eval_size = uni(1, 5);
            spec.num_movies = 40;
            spec.world_seed = uni(0, 1000);
        }
        spec.budget = spec.support_count();
        const auto source = EpisodeSource::synthetic(spec);
        ModelConfig mc;
        source.configure(mc);
        mc.mlp_hidden = uni(2, 8);
        mc.embed_dim = uni(2, 8);
        mc.enc_hidden = uni(2, 8);
        mc.ctrl_hidden = uni(2, 8);
        mc.read_dim = uni(2, 8);
        mc.match_hidden = uni(2, 8);
        mc.matching_steps = uni(1, 3);
        mc.init_seed = rng();
        const Model<double> model(mc);

        // Several partitions of the same episode share one model.
        for (int e = 0; e < 10 && rep.instances < instances; ++e) {
            const auto ep = source.generate(rng());
            ad::Tape<double> tape(false);
            ActiveRun<double> run(model, tape, ep.support, ep.eval, ep.seed);
            std::vector<Label> revealed;
            const std::size_t steps = uni(0, ep.support.size() - 1);
            while (run.t() <= steps && !run.partition().unknown().empty()) {
                ++rep.instances;
                Rng pick(rng());
                auto sel = run.select(SelectMode::sample, &pick);
                double mass = 0;
                for (std::size_t k = 0; k < sel.probabilities.size(); ++k) mass += sel.probabilities[k];
                if (std::abs(mass - 1) > 1e-6 || sel.candidates != run.partition().unknown() ||
                    sel.probabilities.size() != sel.candidates.size()) {
                    ++rep.distribution_violations;
                    note("selection distribution at t=" + std::to_string(run.t()));
                }
                run.reveal(sel.index, ep.support[sel.index].label);
                revealed.push_back(ep.support[sel.index].label);
                const auto fp = run.fast();
                if (!fp.empty() && !detail::inside_hull(fp.prediction.value(), revealed, spec.kind)) {
                    ++rep.fast_violations;
                    note("fast prediction at t=" + std::to_string(run.t()));
                }
                if (!detail::inside_hull(run.slow().prediction.value(), revealed, spec.kind)) {
                    ++rep.slow_violations;
                    note("slow prediction at t=" + std::to_string(run.t()));
                }
            }
        }
    }
    return rep;
}

}  // namespace mal::test
