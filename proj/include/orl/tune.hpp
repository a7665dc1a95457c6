#pragma once

#include "orl/nuisance.hpp"

namespace orl {

enum class TuneStage { Rep, Propensity, Outcome };

// Table-style tuning ranges. Hidden widths scale with a dataset multiplier R:
// {R d, 1.5 R d, 2 R d} for the relevant input dimension.
struct TuneGrid {
    std::vector<double> learning_rates{0.001, 0.005, 0.01};
    std::vector<int> batch_sizes{32, 64, 128};
    std::vector<double> weight_decays{0.0, 0.001, 0.01, 0.1};
    std::vector<int> rep_hiddens;
    std::vector<int> head_hiddens;

    static std::vector<int> width_range(double R, Index d) {
        auto w = [&](double mult) {
            return std::max(1, static_cast<int>(std::lround(mult * R * static_cast<double>(d))));
        };
        return {w(1.0), w(1.5), w(2.0)};
    }

    static TuneGrid defaults(double R, Index d_x, Index d_phi) {
        TuneGrid g;
        g.rep_hiddens = width_range(R, d_x);
        g.head_hiddens = width_range(R, d_phi);
        return g;
    }

    void validate() const {
        if (learning_rates.empty() || batch_sizes.empty() || weight_decays.empty() ||
            rep_hiddens.empty() || head_hiddens.empty())
            throw EmptyGrid("tuning grid has an empty axis");
    }
};

struct TuneDraw {
    double learning_rate = 0.005;
    double weight_decay = 0.0;
    int batch_size = 64;
    int rep_hidden = 8;
    int head_hidden = 8;
};

struct TuneResult {
    TuneDraw chosen;
    int chosen_index = 0;
    double chosen_score = 0.0;
    std::vector<double> scores;  // one CV score per draw, in draw order
};

namespace detail {

inline Dataset subset(const Dataset& d, const std::vector<Index>& rows) {
    Dataset out;
    out.X.resize(static_cast<Index>(rows.size()), d.dim());
    out.A.resize(static_cast<Index>(rows.size()));
    out.Y.resize(static_cast<Index>(rows.size()));
    for (size_t k = 0; k < rows.size(); ++k) {
        out.X.row(static_cast<Index>(k)) = d.X.row(rows[k]);
        out.A[static_cast<Index>(k)] = d.A[rows[k]];
        out.Y[static_cast<Index>(k)] = d.Y[rows[k]];
    }
    return out;
}

inline double factual_mse(const Vector& pred0, const Vector& pred1, const Dataset& val) {
    double s = 0.0;
    for (Index i = 0; i < val.n(); ++i) {
        double p = val.A[i] > 0.5 ? pred1[i] : pred0[i];
        double r = val.Y[i] - p;
        s += r * r;
    }
    return s / static_cast<double>(val.n());
}

inline double factual_bce(const Vector& p1, const Dataset& val) {
    double s = 0.0;
    for (Index i = 0; i < val.n(); ++i) {
        double p = clamp_prob(p1[i]);
        s += -(val.A[i] * std::log(p) + (1.0 - val.A[i]) * std::log(1.0 - p));
    }
    return s / static_cast<double>(val.n());
}

}  // namespace detail

// Random grid search with k-fold cross-validation on the training subset.
// Representation and outcome stages score by factual MSE, the propensity
// stage by factual BCE. Ties break toward the earliest draw. Stage-2 target
// hyperparameters are fixed and never tuned.
inline TuneResult tune(TuneStage stage, const TuneGrid& grid, const RepLearnerSpec& base_spec,
                       const Dataset& data, uint64_t seed, int n_draws = 50, int folds = 5) {
    grid.validate();
    data.validate();
    if (n_draws < 1) throw ConfigError("n_draws must be >= 1");
    if (folds < 2 || folds > static_cast<int>(data.n()))
        throw ConfigError("folds must be in [2, n]");

    Rng draw_rng(derive_seed(seed, "tune-draws"));
    std::vector<TuneDraw> draws;
    for (int k = 0; k < n_draws; ++k) {
        TuneDraw d;
        d.learning_rate =
            grid.learning_rates[draw_rng.below(static_cast<uint32_t>(grid.learning_rates.size()))];
        d.batch_size =
            grid.batch_sizes[draw_rng.below(static_cast<uint32_t>(grid.batch_sizes.size()))];
        d.weight_decay =
            grid.weight_decays[draw_rng.below(static_cast<uint32_t>(grid.weight_decays.size()))];
        d.rep_hidden =
            grid.rep_hiddens[draw_rng.below(static_cast<uint32_t>(grid.rep_hiddens.size()))];
        d.head_hidden =
            grid.head_hiddens[draw_rng.below(static_cast<uint32_t>(grid.head_hiddens.size()))];
        draws.push_back(d);
    }

    // fold assignment: shuffled contiguous blocks
    Rng fold_rng(derive_seed(seed, "tune-folds"));
    std::vector<Index> perm = fold_rng.permutation(data.n());
    std::vector<std::vector<Index>> fold_rows(static_cast<size_t>(folds));
    for (Index i = 0; i < data.n(); ++i)
        fold_rows[static_cast<size_t>(i % folds)].push_back(perm[static_cast<size_t>(i)]);

    TuneResult res;
    res.scores.reserve(draws.size());
    for (size_t di = 0; di < draws.size(); ++di) {
        const TuneDraw& d = draws[di];
        double score = 0.0;
        int used_folds = 0;
        for (int f = 0; f < folds; ++f) {
            std::vector<Index> train_rows, val_rows = fold_rows[static_cast<size_t>(f)];
            for (int f2 = 0; f2 < folds; ++f2)
                if (f2 != f)
                    train_rows.insert(train_rows.end(), fold_rows[static_cast<size_t>(f2)].begin(),
                                      fold_rows[static_cast<size_t>(f2)].end());
            Dataset train = detail::subset(data, train_rows);
            Dataset val = detail::subset(data, val_rows);
            // common random numbers across draws: identical configurations
            // score identically, so ties are real and break to the earliest
            uint64_t fold_seed = derive_seed(derive_seed(seed, "tune-fit"),
                                             static_cast<uint64_t>(f));
            switch (stage) {
                case TuneStage::Rep: {
                    RepLearnerSpec spec = base_spec;
                    spec.learning_rate = d.learning_rate;
                    spec.weight_decay = d.weight_decay;
                    spec.batch_size = d.batch_size;
                    spec.rep_hidden = d.rep_hidden;
                    spec.head_hidden = d.head_hidden;
                    TrainedRepresentation tr = train_representation(spec, train, fold_seed);
                    Matrix heads = tr.heads(val.X);
                    score += detail::factual_mse(heads.col(0), heads.col(1), val);
                    break;
                }
                case TuneStage::Propensity: {
                    NuisanceHyper h;
                    h.hidden = d.rep_hidden;
                    h.learning_rate = d.learning_rate;
                    h.weight_decay = d.weight_decay;
                    h.batch_size = d.batch_size;
                    h.epochs = base_spec.epochs;
                    DenseNet pi = fit_propensity(train, h, fold_seed);
                    score += detail::factual_bce(pi.forward(val.X).col(0), val);
                    break;
                }
                case TuneStage::Outcome: {
                    NuisanceHyper h;
                    h.hidden = d.rep_hidden;
                    h.learning_rate = d.learning_rate;
                    h.weight_decay = d.weight_decay;
                    h.batch_size = d.batch_size;
                    h.epochs = base_spec.epochs;
                    OutcomeNet on = fit_outcome_net(train, h, fold_seed);
                    score += detail::factual_mse(on.predict(val.X, 0), on.predict(val.X, 1), val);
                    break;
                }
            }
            ++used_folds;
        }
        res.scores.push_back(score / static_cast<double>(used_folds));
    }

    res.chosen_index = 0;
    for (size_t di = 1; di < res.scores.size(); ++di)
        if (res.scores[di] < res.scores[static_cast<size_t>(res.chosen_index)])
            res.chosen_index = static_cast<int>(di);
    res.chosen = draws[static_cast<size_t>(res.chosen_index)];
    res.chosen_score = res.scores[static_cast<size_t>(res.chosen_index)];
    return res;
}

}  // namespace orl
