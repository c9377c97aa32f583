#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "trd/common.hpp"
#include "trd/crossval.hpp"

using namespace trd;

TEST_CASE("two folds over four patients") {
    const std::vector<std::string> ids = {"a", "b", "c", "d"};
    const auto f = assign_folds(ids, 2, 3);
    CHECK(std::count(f.begin(), f.end(), 0) == 2);
    CHECK(std::count(f.begin(), f.end(), 1) == 2);
    CHECK(assign_folds(ids, 2, 3) == f);
    CHECK_THROWS_AS(assign_folds(ids, 5, 3), ValidationError);
    CHECK_THROWS_AS(assign_folds(ids, 1, 3), ValidationError);
}

TEST_CASE("no patient is split across folds") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        std::vector<std::string> ids;
        for (int i = 0; i < 57; ++i) ids.push_back("P" + std::to_string((i * 7 + seed) % 23));
        const auto f = assign_folds(ids, 10, seed);
        std::map<std::string, int> fold_of;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto [it, fresh] = fold_of.emplace(ids[i], f[i]);
            CHECK(it->second == f[i]);
        }
        const auto cv = cross_validate(ids, 10, seed, [&](const auto& train, const auto& test) {
            std::set<std::string> train_ids;
            for (auto i : train) train_ids.insert(ids[i]);
            for (auto i : test) CHECK_FALSE(train_ids.contains(ids[i]));
            return std::vector<double>(test.size(), 1.0);
        });
        CHECK(cv.predictions.size() == ids.size());
        for (double p : cv.predictions) CHECK(p == 1.0);
    }
}

TEST_CASE("predictions scatter back to cohort order") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("P" + std::to_string(i));
    const auto cv = cross_validate(ids, 4, 1, [](const auto&, const auto& test) {
        std::vector<double> out;
        for (auto i : test) out.push_back(static_cast<double>(i));
        return out;
    });
    for (std::size_t i = 0; i < ids.size(); ++i) CHECK(cv.predictions[i] == static_cast<double>(i));
    std::size_t total = 0;
    for (int k = 0; k < cv.k; ++k) total += cv.test_indices(k).size();
    CHECK(total == ids.size());
}
