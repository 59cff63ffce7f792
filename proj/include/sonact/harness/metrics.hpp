#pragma once

// Evaluation metrics: action-space MSE and simulator rollouts scored by
// repeat-normalized DTW between amplitude envelopes.

#include <sonact/align/dtw.hpp>
#include <sonact/audio/envelope.hpp>
#include <sonact/audio/spectrogram.hpp>
#include <sonact/error.hpp>
#include <sonact/models/baselines.hpp>
#include <sonact/models/normalizer.hpp>
#include <sonact/synth/dataset.hpp>
#include <sonact/synth/seed.hpp>
#include <sonact/synth/simulator.hpp>

#include <json.hpp>

#include <cmath>
#include <vector>

namespace sonact::harness {

using models::action_normalizer;
using synth::action_params;

struct mse_result {
    double raw = 0.0;
    double normalized = 0.0;
    std::size_t n = 0;
};

/// Mean squared L2 error of predictions against the truth, in raw units and
/// in the normalizer's space. Predictions are clipped to the action bounds first.
inline mse_result eval_mse(const std::vector<action_params>& predicted, const std::vector<action_params>& truth,
                           const action_normalizer& norm) {
    if (truth.empty())
        throw config_error("eval_mse: empty test split");
    if (predicted.size() != truth.size())
        throw std::invalid_argument("eval_mse: " + std::to_string(predicted.size()) + " predictions for "
                                    + std::to_string(truth.size()) + " test samples");
    mse_result r;
    r.n = truth.size();
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto p = synth::clip_to_bounds(norm.spec(), predicted[i]);
        r.raw += models::squared_error(p, truth[i]);
        r.normalized += models::squared_error(norm.normalize(p), norm.normalize(truth[i]));
    }
    r.raw /= static_cast<double>(r.n);
    r.normalized /= static_cast<double>(r.n);
    return r;
}

/// Expected MSE of the random baseline: every train action is equally likely,
/// so the error of each test sample is averaged over all of them.
inline mse_result eval_random_mse(const std::vector<models::labeled_action>& train,
                                  const std::vector<action_params>& truth, const action_normalizer& norm) {
    if (truth.empty())
        throw config_error("eval_mse: empty test split");
    if (train.empty())
        throw config_error("random_baseline: empty training split");
    std::vector<models::labeled_action> train_n;
    train_n.reserve(train.size());
    for (const auto& t : train)
        train_n.push_back({t.behavior_id, norm.normalize(t.action)});
    mse_result r;
    r.n = truth.size();
    for (const auto& a : truth) {
        r.raw += models::random_expected_error(train, a);
        r.normalized += models::random_expected_error(train_n, norm.normalize(a));
    }
    r.raw /= static_cast<double>(r.n);
    r.normalized /= static_cast<double>(r.n);
    return r;
}

// ---------------------------------------------------------------- rollouts

/// Seed slots of a test record's rollout simulations.
inline constexpr std::uint64_t rollout_slot = 100;
inline std::uint64_t reference_seed(std::uint64_t record_seed, std::size_t r) {
    return synth::derive_seed(record_seed, 1 + r);
}
inline std::uint64_t rollout_seed(std::uint64_t record_seed) { return synth::derive_seed(record_seed, rollout_slot); }

/// Envelope of a clip at the pipeline rate.
inline audio::envelope rollout_envelope(const audio::audio_clip& clip) {
    return audio::amplitude_envelope(audio::to_pipeline_rate(clip));
}

/// The desired envelopes of a test split and the pooled statistics of DTW
/// distances between each desired clip and fresh re-simulations of its action.
struct rollout_reference {
    synth::task_id task = synth::task_id::rattle;
    double noise_level = synth::default_noise_level;
    std::vector<std::uint64_t> record_seeds;
    std::vector<action_params> truth;
    std::vector<audio::envelope> desired;
    align::normalization_stats stats;
};

/// Desired envelopes and ground truth of the test split; statistics unset.
inline rollout_reference desired_envelopes(const synth::dataset& ds) {
    rollout_reference ref;
    ref.task = ds.task();
    ref.noise_level = ds.manifest().noise_level;
    for (auto i : ds.test_records()) {
        const auto& rec = ds.record(i);
        ref.record_seeds.push_back(rec.seed);
        ref.truth.push_back(rec.action);
        ref.desired.push_back(rollout_envelope(ds.load_clip(i)));
    }
    if (ref.desired.empty())
        throw config_error("eval_dtw_rollout: empty test split");
    return ref;
}

/// Pools the distances between every desired clip and `repeats` fresh
/// re-simulations of its action.
inline align::normalization_stats fit_reference_stats(const rollout_reference& ref, std::size_t repeats) {
    if (repeats < 2)
        throw config_error("eval_dtw_rollout: need at least 2 reference repeats");
    const auto spec = synth::spec_for(ref.task);
    std::vector<double> distances;
    distances.reserve(ref.desired.size() * repeats);
    for (std::size_t k = 0; k < ref.desired.size(); ++k)
        for (std::size_t r = 0; r < repeats; ++r) {
            const auto sim = synth::simulate(spec, ref.truth[k], reference_seed(ref.record_seeds[k], r), ref.noise_level);
            distances.push_back(align::dtw_distance(ref.desired[k], rollout_envelope(sim)).distance);
        }
    return align::fit_normalization(distances);
}

inline rollout_reference build_rollout_reference(const synth::dataset& ds, std::size_t repeats) {
    auto ref = desired_envelopes(ds);
    ref.stats = fit_reference_stats(ref, repeats);
    return ref;
}

struct rollout_result {
    double mean = 0.0;
    std::vector<double> scores;
};

/// Simulates each predicted action with the record's rollout seed and scores
/// it against the desired envelope.
inline rollout_result eval_dtw_rollout(const rollout_reference& ref, const std::vector<action_params>& predicted) {
    if (predicted.size() != ref.desired.size())
        throw std::invalid_argument("eval_dtw_rollout: " + std::to_string(predicted.size()) + " predictions for "
                                    + std::to_string(ref.desired.size()) + " test samples");
    const auto spec = synth::spec_for(ref.task);
    rollout_result out;
    out.scores.reserve(predicted.size());
    for (std::size_t k = 0; k < predicted.size(); ++k) {
        const auto sim = synth::simulate(spec, synth::clip_to_bounds(spec, predicted[k]),
                                         rollout_seed(ref.record_seeds[k]), ref.noise_level);
        const double d = align::dtw_distance(ref.desired[k], rollout_envelope(sim)).distance;
        out.scores.push_back(align::normalized_score(d, ref.stats));
        out.mean += out.scores.back();
    }
    out.mean /= static_cast<double>(out.scores.size());
    return out;
}

/// One concrete random-baseline action per test sample, for rollouts.
inline std::vector<action_params> random_rollout_actions(const std::vector<models::labeled_action>& train,
                                                         std::size_t n_test, std::uint64_t seed) {
    std::vector<action_params> out;
    out.reserve(n_test);
    for (std::size_t k = 0; k < n_test; ++k)
        out.push_back(models::random_baseline(train, synth::derive_seed(seed, k)).action);
    return out;
}

inline std::vector<action_params> oracle_actions(const std::vector<models::labeled_action>& train,
                                                 const std::vector<action_params>& truth) {
    std::vector<action_params> out;
    out.reserve(truth.size());
    for (const auto& a : truth)
        out.push_back(models::oracle_baseline(a, train).action);
    return out;
}

} // namespace sonact::harness
