#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace fuseqa {

// One land-cover class in a CLC-style nomenclature. Level-1 classes have no
// parent; deeper classes point at the class one level up.
struct ClassDef {
    int id = -1;
    std::string name;  // canonical lowercase
    int level = 1;
    std::optional<int> parent;

    bool operator==(const ClassDef&) const = default;
};

enum class NomKind { BENMM19, RSVQA61, CUSTOM };

inline std::string_view to_string(NomKind k) {
    switch (k) {
        case NomKind::BENMM19: return "BENMM19";
        case NomKind::RSVQA61: return "RSVQA61";
        default: return "CUSTOM";
    }
}

inline NomKind nom_kind_from_string(std::string_view s) {
    if (s == "BENMM19") return NomKind::BENMM19;
    if (s == "RSVQA61") return NomKind::RSVQA61;
    if (s == "CUSTOM") return NomKind::CUSTOM;
    throw std::invalid_argument("unknown nomenclature kind: " + std::string(s));
}

struct NomenclatureError : std::runtime_error {
    enum class Code { DuplicateName, DanglingParent, WrongClassCount, BadDocument };
    Code code;
    NomenclatureError(Code c, const std::string& what) : std::runtime_error(what), code(c) {}
};

// Ordered set of classes; file order defines the index order used by every
// label vector in the pipeline.
class Nomenclature {
public:
    Nomenclature() = default;

    Nomenclature(std::vector<ClassDef> classes, NomKind kind) : classes_(std::move(classes)), kind_(kind) {
        validate();
        for (const auto& c : classes_) by_name_.emplace(c.name, c.id);
    }

    std::size_t size() const { return classes_.size(); }
    NomKind kind() const { return kind_; }
    const std::vector<ClassDef>& classes() const { return classes_; }
    const ClassDef& at(std::size_t id) const { return classes_.at(id); }
    const std::string& name_of(std::size_t id) const { return classes_.at(id).name; }

    std::optional<int> index_of(std::string_view name) const {
        auto it = by_name_.find(std::string(name));
        if (it == by_name_.end()) return std::nullopt;
        return it->second;
    }

    bool operator==(const Nomenclature& o) const { return kind_ == o.kind_ && classes_ == o.classes_; }

private:
    void validate() const {
        using Code = NomenclatureError::Code;
        std::unordered_map<std::string, int> seen;
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            const ClassDef& c = classes_[i];
            if (c.id != static_cast<int>(i))
                throw NomenclatureError(Code::BadDocument, "class ids must match positions");
            if (c.name.empty()) throw NomenclatureError(Code::BadDocument, "empty class name");
            if (c.level < 1 || c.level > 3)
                throw NomenclatureError(Code::BadDocument, "level out of range for '" + c.name + "'");
            if (!seen.emplace(c.name, c.id).second)
                throw NomenclatureError(Code::DuplicateName, "duplicate class name '" + c.name + "'");
            if (c.parent.has_value() != (c.level > 1))
                throw NomenclatureError(Code::BadDocument,
                                        "class '" + c.name + "' must have a parent iff its level > 1");
            if (c.parent) {
                if (*c.parent < 0 || *c.parent >= static_cast<int>(classes_.size()))
                    throw NomenclatureError(Code::DanglingParent, "parent of '" + c.name + "' out of range");
                if (classes_[*c.parent].level != c.level - 1)
                    throw NomenclatureError(Code::BadDocument,
                                            "parent of '" + c.name + "' is not one level up");
            }
        }
        if (kind_ == NomKind::BENMM19) {
            if (classes_.size() != 19)
                throw NomenclatureError(Code::WrongClassCount, "BENMM19 requires exactly 19 classes");
            for (const auto& c : classes_)
                if (c.level != 1)
                    throw NomenclatureError(Code::BadDocument, "BENMM19 classes are flat (level 1)");
        } else if (kind_ == NomKind::RSVQA61) {
            if (classes_.size() != 61)
                throw NomenclatureError(Code::WrongClassCount, "RSVQA61 requires exactly 61 classes");
            if (seen.count("glaciers and perpetual snow"))
                throw NomenclatureError(Code::BadDocument,
                                        "RSVQA61 must not contain 'glaciers and perpetual snow'");
            for (const char* merged : {"water bodies", "pastures"})
                if (!seen.count(merged))
                    throw NomenclatureError(Code::BadDocument,
                                            std::string("RSVQA61 must contain '") + merged + "'");
        }
    }

    std::vector<ClassDef> classes_;
    NomKind kind_ = NomKind::CUSTOM;
    std::unordered_map<std::string, int> by_name_;
};

// Per-sample binary label vector aligned with a Nomenclature.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::size_t n) : bits_(n, 0) {}

    static LabelSet of(std::size_t n, std::initializer_list<int> set_ids) {
        LabelSet ls(n);
        for (int id : set_ids) ls.set(static_cast<std::size_t>(id));
        return ls;
    }

    std::size_t size() const { return bits_.size(); }
    bool test(std::size_t j) const { return bits_.at(j) != 0; }
    void set(std::size_t j, bool v = true) { bits_.at(j) = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t c = 0;
        for (auto b : bits_) c += b;
        return c;
    }

    const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool operator==(const LabelSet&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

using ClassWeights = std::vector<double>;

inline std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

// Nomenclature files are a JSON array of {name, level, parent_name|null};
// array order defines the index order.
inline Nomenclature load_nomenclature(const nlohmann::json& doc, NomKind kind = NomKind::CUSTOM) {
    using Code = NomenclatureError::Code;
    if (!doc.is_array()) throw NomenclatureError(Code::BadDocument, "nomenclature document must be a JSON array");

    std::vector<ClassDef> classes;
    std::vector<std::optional<std::string>> parent_names;
    std::unordered_map<std::string, int> index;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("name") || !item.contains("level"))
            throw NomenclatureError(Code::BadDocument, "each class needs at least {name, level}");
        ClassDef c;
        c.id = static_cast<int>(classes.size());
        c.name = to_lower(item.at("name").get<std::string>());
        c.level = item.at("level").get<int>();
        if (item.contains("parent_name") && !item.at("parent_name").is_null())
            parent_names.emplace_back(to_lower(item.at("parent_name").get<std::string>()));
        else
            parent_names.emplace_back(std::nullopt);
        if (!index.emplace(c.name, c.id).second)
            throw NomenclatureError(Code::DuplicateName, "duplicate class name '" + c.name + "'");
        classes.push_back(std::move(c));
    }
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (!parent_names[i]) continue;
        auto it = index.find(*parent_names[i]);
        if (it == index.end())
            throw NomenclatureError(Code::DanglingParent,
                                    "parent '" + *parent_names[i] + "' of '" + classes[i].name + "' not defined");
        classes[i].parent = it->second;
    }
    return Nomenclature(std::move(classes), kind);
}

inline Nomenclature load_nomenclature_file(const std::string& path, NomKind kind = NomKind::CUSTOM) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open nomenclature file: " + path);
    nlohmann::json doc = nlohmann::json::parse(in);
    return load_nomenclature(doc, kind);
}

inline nlohmann::json to_json(const Nomenclature& nom) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : nom.classes()) {
        nlohmann::json item;
        item["name"] = c.name;
        item["level"] = c.level;
        item["parent_name"] = c.parent ? nlohmann::json(nom.name_of(*c.parent)) : nlohmann::json(nullptr);
        arr.push_back(std::move(item));
    }
    return arr;
}

// Adds the ancestors of every set bit. Idempotent and monotone.
inline LabelSet hierarchy_closure(const LabelSet& labels, const Nomenclature& nom) {
    if (labels.size() != nom.size()) throw std::invalid_argument("label length does not match nomenclature");
    LabelSet out = labels;
    for (std::size_t j = 0; j < nom.size(); ++j) {
        if (!labels.test(j)) continue;
        std::optional<int> p = nom.at(j).parent;
        while (p) {
            out.set(static_cast<std::size_t>(*p));
            p = nom.at(static_cast<std::size_t>(*p)).parent;
        }
    }
    return out;
}

// Per-class fraction of samples carrying the class.
inline std::vector<double> class_frequencies(std::span<const LabelSet> dataset) {
    if (dataset.empty()) throw std::invalid_argument("class_frequencies: empty dataset");
    const std::size_t n = dataset.front().size();
    std::vector<double> freqs(n, 0.0);
    for (const LabelSet& ls : dataset) {
        if (ls.size() != n) throw std::invalid_argument("class_frequencies: inconsistent label lengths");
        for (std::size_t j = 0; j < n; ++j)
            if (ls.test(j)) freqs[j] += 1.0;
    }
    for (double& f : freqs) f /= static_cast<double>(dataset.size());
    return freqs;
}

// Loss weights as the reciprocal class frequency. Zero frequencies are
// clamped at eps = 1/(2*dataset_size) so absent classes get the largest
// finite weight; the result is mean-normalized to keep the loss scale
// comparable with unweighted training.
inline ClassWeights inverse_frequency_weights(std::span<const double> freqs, std::size_t dataset_size) {
    if (dataset_size == 0) throw std::invalid_argument("inverse_frequency_weights: dataset_size must be positive");
    if (freqs.empty()) throw std::invalid_argument("inverse_frequency_weights: empty frequency vector");
    const double eps = 1.0 / (2.0 * static_cast<double>(dataset_size));
    ClassWeights w(freqs.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < freqs.size(); ++j) {
        w[j] = 1.0 / std::max(freqs[j], eps);
        sum += w[j];
    }
    const double mean = sum / static_cast<double>(w.size());
    for (double& x : w) x /= mean;
    return w;
}

inline ClassWeights uniform_weights(std::size_t n) { return ClassWeights(n, 1.0); }

// Flat CUSTOM nomenclature with generated names; used by the synthetic
// pipeline and by tests that should not depend on the bundled class lists.
inline Nomenclature make_flat_nomenclature(int n) {
    std::vector<ClassDef> classes;
    classes.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        ClassDef c;
        c.id = i;
        c.name = "class " + std::to_string(i);
        c.level = 1;
        classes.push_back(std::move(c));
    }
    return Nomenclature(std::move(classes), NomKind::CUSTOM);
}

}  // namespace fuseqa
