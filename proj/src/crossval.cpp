#include "trd/crossval.hpp"

#include <algorithm>
#include <map>
#include <random>

#include "trd/common.hpp"

namespace trd {

std::vector<int> assign_folds(std::span<const std::string> patient_ids, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("cross-validation needs k >= 2");
    std::vector<std::string> patients(patient_ids.begin(), patient_ids.end());
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    if (patients.size() < static_cast<std::size_t>(k))
        throw ValidationError("cross-validation needs at least k=" + std::to_string(k) + " patients, got " +
                              std::to_string(patients.size()));
    std::mt19937_64 rng(seed);
    std::shuffle(patients.begin(), patients.end(), rng);
    std::map<std::string, int> fold_of;
    for (std::size_t i = 0; i < patients.size(); ++i) fold_of[patients[i]] = static_cast<int>(i % k);
    std::vector<int> folds;
    folds.reserve(patient_ids.size());
    for (const auto& p : patient_ids) folds.push_back(fold_of.at(p));
    return folds;
}

std::vector<std::size_t> CvResult::test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < folds.size(); ++i)
        if (folds[i] == fold) out.push_back(i);
    return out;
}

CvResult cross_validate(std::vector<int> folds, int k, const FitPredict& fit_predict) {
    CvResult r;
    r.k = k;
    r.folds = std::move(folds);
    r.predictions.assign(r.folds.size(), 0.0);
    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < r.folds.size(); ++i) (r.folds[i] == f ? test : train).push_back(i);
        if (test.empty()) continue;
        const auto pred = fit_predict(train, test);
        if (pred.size() != test.size()) throw std::logic_error("fit_predict returned the wrong number of predictions");
        for (std::size_t j = 0; j < test.size(); ++j) r.predictions[test[j]] = pred[j];
    }
    return r;
}

CvResult cross_validate(std::span<const std::string> patient_ids, int k, std::uint64_t seed,
                        const FitPredict& fit_predict) {
    return cross_validate(assign_folds(patient_ids, k, seed), k, fit_predict);
}

}  // namespace trd
