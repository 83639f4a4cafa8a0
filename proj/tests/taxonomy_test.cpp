#include <gtest/gtest.h>

#include "fuseqa/rng.hpp"
#include "fuseqa/taxonomy.hpp"

using namespace fuseqa;

namespace {

nlohmann::json small_forest_doc() {
    return nlohmann::json::parse(R"([
        {"name": "wetlands", "level": 1, "parent_name": null},
        {"name": "inland wetlands", "level": 2, "parent_name": "wetlands"},
        {"name": "peatbogs", "level": 3, "parent_name": "inland wetlands"},
        {"name": "water bodies", "level": 1, "parent_name": null},
        {"name": "pastures", "level": 1, "parent_name": null}
    ])");
}

TEST(Nomenclature, BundledBenmm19Has19Classes) {
    const auto nom = load_nomenclature_file(std::string(FUSEQA_DATA_DIR) + "/nomenclatures/benmm19.json",
                                            NomKind::BENMM19);
    EXPECT_EQ(nom.size(), 19u);
    EXPECT_EQ(nom.kind(), NomKind::BENMM19);
    for (const auto& c : nom.classes()) EXPECT_EQ(c.level, 1);
}

TEST(Nomenclature, BundledRsvqa61Has61Classes) {
    const auto nom = load_nomenclature_file(std::string(FUSEQA_DATA_DIR) + "/nomenclatures/rsvqa61.json",
                                            NomKind::RSVQA61);
    EXPECT_EQ(nom.size(), 61u);
    EXPECT_FALSE(nom.index_of("glaciers and perpetual snow").has_value());
    EXPECT_TRUE(nom.index_of("water bodies").has_value());
    EXPECT_TRUE(nom.index_of("pastures").has_value());
}

TEST(Nomenclature, DuplicateNameRejected) {
    auto doc = nlohmann::json::parse(R"([
        {"name": "pastures", "level": 1, "parent_name": null},
        {"name": "pastures", "level": 1, "parent_name": null}
    ])");
    try {
        load_nomenclature(doc);
        FAIL() << "expected NomenclatureError";
    } catch (const NomenclatureError& e) {
        EXPECT_EQ(e.code, NomenclatureError::Code::DuplicateName);
    }
}

TEST(Nomenclature, DanglingParentRejected) {
    auto doc = nlohmann::json::parse(R"([
        {"name": "peatbogs", "level": 2, "parent_name": "inland wetlands"}
    ])");
    try {
        load_nomenclature(doc);
        FAIL() << "expected NomenclatureError";
    } catch (const NomenclatureError& e) {
        EXPECT_EQ(e.code, NomenclatureError::Code::DanglingParent);
    }
}

TEST(Nomenclature, WrongCountForTaggedKindRejected) {
    auto doc = nlohmann::json::parse(R"([{"name": "pastures", "level": 1, "parent_name": null}])");
    try {
        load_nomenclature(doc, NomKind::BENMM19);
        FAIL() << "expected NomenclatureError";
    } catch (const NomenclatureError& e) {
        EXPECT_EQ(e.code, NomenclatureError::Code::WrongClassCount);
    }
}

TEST(Nomenclature, RoundTripsThroughJson) {
    for (const char* file : {"benmm19.json", "rsvqa61.json"}) {
        const NomKind kind = std::string(file) == "benmm19.json" ? NomKind::BENMM19 : NomKind::RSVQA61;
        const auto nom = load_nomenclature_file(std::string(FUSEQA_DATA_DIR) + "/nomenclatures/" + file, kind);
        const auto reloaded = load_nomenclature(to_json(nom), kind);
        EXPECT_EQ(nom, reloaded) << file;
    }
}

TEST(Nomenclature, NamesAreLowercasedOnLoad) {
    auto doc = nlohmann::json::parse(R"([{"name": "Water Bodies", "level": 1, "parent_name": null}])");
    const auto nom = load_nomenclature(doc);
    EXPECT_EQ(nom.name_of(0), "water bodies");
}

TEST(HierarchyClosure, AddsAllAncestors) {
    const auto nom = load_nomenclature(small_forest_doc());
    const auto peatbogs = *nom.index_of("peatbogs");
    const auto closed = hierarchy_closure(LabelSet::of(nom.size(), {peatbogs}), nom);
    EXPECT_TRUE(closed.test(*nom.index_of("peatbogs")));
    EXPECT_TRUE(closed.test(*nom.index_of("inland wetlands")));
    EXPECT_TRUE(closed.test(*nom.index_of("wetlands")));
    EXPECT_EQ(closed.count(), 3u);
}

TEST(HierarchyClosure, IdempotentAndMonotone) {
    const auto nom = load_nomenclature_file(std::string(FUSEQA_DATA_DIR) + "/nomenclatures/rsvqa61.json",
                                            NomKind::RSVQA61);
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        LabelSet ls(nom.size());
        for (std::size_t j = 0; j < nom.size(); ++j) ls.set(j, rng.bernoulli(0.15));
        const LabelSet once = hierarchy_closure(ls, nom);
        EXPECT_EQ(once, hierarchy_closure(once, nom));
        for (std::size_t j = 0; j < nom.size(); ++j)
            if (ls.test(j)) EXPECT_TRUE(once.test(j));
    }
}

TEST(HierarchyClosure, EmptySetStaysEmpty) {
    const auto nom = load_nomenclature(small_forest_doc());
    EXPECT_EQ(hierarchy_closure(LabelSet(nom.size()), nom).count(), 0u);
}

TEST(ClassFrequencies, CountsFractions) {
    std::vector<LabelSet> data = {LabelSet::of(3, {0, 1}), LabelSet::of(3, {1}), LabelSet::of(3, {1}),
                                  LabelSet::of(3, {1})};
    const auto freqs = class_frequencies(data);
    EXPECT_DOUBLE_EQ(freqs[0], 0.25);
    EXPECT_DOUBLE_EQ(freqs[1], 1.0);
    EXPECT_DOUBLE_EQ(freqs[2], 0.0);
}

TEST(ClassFrequencies, EmptyDatasetRejected) {
    EXPECT_THROW(class_frequencies({}), std::invalid_argument);
}

TEST(InverseFrequencyWeights, MatchesHandDerivedValues) {
    // reciprocals [2, 4], mean 3 -> normalized [2/3, 4/3]
    const std::vector<double> freqs = {0.5, 0.25};
    const auto w = inverse_frequency_weights(freqs, 100);
    EXPECT_NEAR(w[0], 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(w[1], 4.0 / 3.0, 1e-12);
}

TEST(InverseFrequencyWeights, UniformFrequenciesGiveUnitWeights) {
    const std::vector<double> freqs = {0.2, 0.2, 0.2};
    for (double w : inverse_frequency_weights(freqs, 10)) EXPECT_NEAR(w, 1.0, 1e-12);
}

TEST(InverseFrequencyWeights, ZeroFrequencyClampedByEps) {
    // eps = 1/200, so the raw weights are [1/0.5, 200] before normalization
    const std::vector<double> freqs = {0.5, 0.0};
    const auto w = inverse_frequency_weights(freqs, 100);
    const double mean = (2.0 + 200.0) / 2.0;
    EXPECT_NEAR(w[1], 200.0 / mean, 1e-12);
    EXPECT_NEAR(w[0], 2.0 / mean, 1e-12);
}

TEST(InverseFrequencyWeights, MeanIsAlwaysOne) {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> freqs(1 + rng.below(20));
        for (double& f : freqs) f = rng.uniform();
        const auto w = inverse_frequency_weights(freqs, 50);
        double mean = 0.0;
        for (double x : w) mean += x;
        mean /= double(w.size());
        EXPECT_NEAR(mean, 1.0, 1e-12);
        for (double x : w) EXPECT_GT(x, 0.0);
    }
}

}  // namespace
