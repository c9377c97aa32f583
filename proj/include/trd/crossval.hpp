#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace trd {

/// Patient-grouped fold per item: patients are shuffled under `seed` and dealt round-robin,
/// so every stay of a patient lands in the same fold.
std::vector<int> assign_folds(std::span<const std::string> patient_ids, int k, std::uint64_t seed);

/// Predictions for `test` after fitting on `train` (indices into the cohort).
using FitPredict = std::function<std::vector<double>(const std::vector<std::size_t>& train,
                                                     const std::vector<std::size_t>& test)>;

struct CvResult {
    std::vector<double> predictions;  // aligned to the cohort, each item predicted once
    std::vector<int> folds;
    int k = 0;

    std::vector<std::size_t> test_indices(int fold) const;
};

/// Runs folds in index order and scatters out-of-fold predictions back into cohort order.
CvResult cross_validate(std::span<const std::string> patient_ids, int k, std::uint64_t seed,
                        const FitPredict& fit_predict);
CvResult cross_validate(std::vector<int> folds, int k, const FitPredict& fit_predict);

}  // namespace trd
