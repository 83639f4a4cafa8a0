#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fuseqa/metrics.hpp"
#include "fuseqa/rng.hpp"
#include "fuseqa/taxonomy.hpp"

namespace fuseqa {

inline constexpr std::string_view kLandCoverQuestion = "what land cover classes are present?";

// Parsed question. Yes/no questions carry a boolean tree over Present
// leaves ("and" binds tighter than "or", both left-associative); land-cover
// listing questions have no expression. The original text is kept so
// alternative evaluators can re-parse it.
struct QuestionAst {
    struct Node {
        enum class Op { Present, And, Or };
        Op op = Op::Present;
        int class_id = -1;
        int lhs = -1, rhs = -1;
    };

    QuestionType type = QuestionType::YesNo;
    std::vector<Node> nodes;
    int root = -1;
    std::string text;

    int leaf_count() const {
        int c = 0;
        for (const Node& n : nodes) c += n.op == Node::Op::Present;
        return c;
    }

    // structural equality from the roots; ignores text and node layout
    bool same_structure(const QuestionAst& o) const {
        if (type != o.type) return false;
        if (type == QuestionType::LandCover) return true;
        return same_subtree(*this, root, o, o.root);
    }

private:
    static bool same_subtree(const QuestionAst& a, int ia, const QuestionAst& b, int ib) {
        if ((ia < 0) != (ib < 0)) return false;
        if (ia < 0) return true;
        const Node &na = a.nodes[static_cast<std::size_t>(ia)], &nb = b.nodes[static_cast<std::size_t>(ib)];
        if (na.op != nb.op || na.class_id != nb.class_id) return false;
        return same_subtree(a, na.lhs, b, nb.lhs) && same_subtree(a, na.rhs, b, nb.rhs);
    }
};

struct ParseError : std::runtime_error {
    enum class Code { UnknownClass, MalformedQuestion, MoreThanTwoConjunctions };
    Code code;
    ParseError(Code c, const std::string& what) : std::runtime_error(what), code(c) {}
};

namespace detail {

inline std::string normalize_question(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : text) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

inline bool word_boundary(const std::string& s, std::size_t pos) {
    return pos >= s.size() || s[pos] == ' ' || s[pos] == '?';
}

// matches `word` at pos followed by a word boundary
inline bool match_word(const std::string& s, std::size_t pos, std::string_view word) {
    return s.compare(pos, word.size(), word) == 0 && word_boundary(s, pos + word.size());
}

struct Segmentation {
    std::vector<int> class_ids;
    std::vector<bool> op_is_and;  // between consecutive terms
};

struct SegSearch {
    const std::string& s;
    const Nomenclature& nom;
    std::vector<const std::string*> names_by_length;  // longest first
    std::size_t deepest_fail = 0;
    bool saw_term_failure = false;

    explicit SegSearch(const std::string& text, const Nomenclature& n) : s(text), nom(n) {
        for (const ClassDef& c : nom.classes()) names_by_length.push_back(&c.name);
        std::sort(names_by_length.begin(), names_by_length.end(),
                  [](const std::string* a, const std::string* b) {
                      return a->size() != b->size() ? a->size() > b->size() : *a < *b;
                  });
    }

    void note_fail(std::size_t pos) {
        if (pos >= deepest_fail) {
            deepest_fail = pos;
            saw_term_failure = true;
        }
    }

    // TERM (CONJ TERM)* "?" from pos; depth-first, longest names first, so
    // the first complete segmentation uses the fewest terms
    bool parse_terms(std::size_t pos, Segmentation& seg) {
        while (pos < s.size() && s[pos] == ' ') ++pos;
        std::size_t term_pos = pos;
        bool matched_any = false;
        for (std::string_view article : {std::string_view("a"), std::string_view("an"), std::string_view("some")}) {
            if (match_word(s, term_pos, article) && term_pos + article.size() < s.size()) {
                if (try_names(term_pos + article.size() + 1, seg, matched_any)) return true;
            }
        }
        if (try_names(term_pos, seg, matched_any)) return true;
        // no nomenclature name matched here at all: an unknown-class
        // failure; a matched name whose continuation failed stays a
        // malformed-question failure
        if (!matched_any) note_fail(term_pos);
        return false;
    }

private:
    bool try_names(std::size_t pos, Segmentation& seg, bool& matched_any) {
        for (const std::string* name : names_by_length) {
            if (!match_word(s, pos, *name)) continue;
            matched_any = true;
            const int id = *nom.index_of(*name);
            seg.class_ids.push_back(id);
            std::size_t after = pos + name->size();
            if (finish_or_continue(after, seg)) return true;
            seg.class_ids.pop_back();
        }
        return false;
    }

    bool finish_or_continue(std::size_t pos, Segmentation& seg) {
        while (pos < s.size() && s[pos] == ' ') ++pos;
        if (pos < s.size() && s[pos] == '?') return pos + 1 == s.size();
        for (bool is_and : {true, false}) {
            const std::string_view conj = is_and ? "and" : "or";
            if (!match_word(s, pos, conj)) continue;
            seg.op_is_and.push_back(is_and);
            if (parse_terms(pos + conj.size(), seg)) return true;
            seg.op_is_and.pop_back();
        }
        return false;
    }
};

inline int add_node(QuestionAst& ast, QuestionAst::Node n) {
    ast.nodes.push_back(n);
    return static_cast<int>(ast.nodes.size()) - 1;
}

// folds a term/op sequence with "and" over "or" precedence, both
// left-associative
inline int fold_with_precedence(QuestionAst& ast, const Segmentation& seg) {
    using Node = QuestionAst::Node;
    std::vector<int> or_groups;
    int current = add_node(ast, {Node::Op::Present, seg.class_ids[0], -1, -1});
    for (std::size_t k = 0; k < seg.op_is_and.size(); ++k) {
        const int leaf = add_node(ast, {Node::Op::Present, seg.class_ids[k + 1], -1, -1});
        if (seg.op_is_and[k]) {
            current = add_node(ast, {Node::Op::And, -1, current, leaf});
        } else {
            or_groups.push_back(current);
            current = leaf;
        }
    }
    or_groups.push_back(current);
    int root = or_groups[0];
    for (std::size_t k = 1; k < or_groups.size(); ++k)
        root = add_node(ast, {Node::Op::Or, -1, root, or_groups[k]});
    return root;
}

}  // namespace detail

// Grammar:
//   LAND_COVER := "what land cover classes are present?"
//   YES_NO     := ("is there" | "are there") TERM (CONJ TERM){0,2} "?"
//   TERM       := ("a" | "an" | "some")? class-name
//   CONJ       := "and" | "or"
// Case-insensitive; class names are matched against the nomenclature,
// longest match first (names may themselves contain "and" or commas).
inline QuestionAst parse_question(std::string_view text, const Nomenclature& nom) {
    using Code = ParseError::Code;
    const std::string s = detail::normalize_question(text);

    QuestionAst ast;
    ast.text = std::string(text);
    if (s == kLandCoverQuestion) {
        ast.type = QuestionType::LandCover;
        return ast;
    }

    std::size_t pos = 0;
    if (s.rfind("is there ", 0) == 0) pos = 9;
    else if (s.rfind("are there ", 0) == 0) pos = 10;
    else throw ParseError(Code::MalformedQuestion, "question does not match any template: '" + s + "'");

    detail::SegSearch search(s, nom);
    detail::Segmentation seg;
    if (!search.parse_terms(pos, seg)) {
        if (search.saw_term_failure) {
            std::size_t start = search.deepest_fail;
            std::size_t end = s.find_first_of('?', start);
            if (end == std::string::npos) end = s.size();
            std::string guess = s.substr(start, end - start);
            while (!guess.empty() && guess.back() == ' ') guess.pop_back();
            if (!guess.empty())
                throw ParseError(Code::UnknownClass, "unknown class name near '" + guess + "'");
        }
        throw ParseError(Code::MalformedQuestion, "malformed question: '" + s + "'");
    }
    if (seg.class_ids.size() > 3)
        throw ParseError(Code::MoreThanTwoConjunctions, "more than two conjunctions in question");

    ast.type = QuestionType::YesNo;
    ast.root = detail::fold_with_precedence(ast, seg);
    return ast;
}

// Canonical text for a grammar-producible AST; parse_question(render(...))
// returns the same structure.
inline std::string render_question(const QuestionAst& ast, const Nomenclature& nom) {
    if (ast.type == QuestionType::LandCover) return std::string(kLandCoverQuestion);
    std::string out = "are there ";
    auto render = [&](auto&& self, int idx) -> void {
        const QuestionAst::Node& n = ast.nodes[static_cast<std::size_t>(idx)];
        switch (n.op) {
            case QuestionAst::Node::Op::Present:
                out += nom.name_of(static_cast<std::size_t>(n.class_id));
                break;
            case QuestionAst::Node::Op::And:
                self(self, n.lhs);
                out += " and ";
                self(self, n.rhs);
                break;
            case QuestionAst::Node::Op::Or:
                self(self, n.lhs);
                out += " or ";
                self(self, n.rhs);
                break;
        }
    };
    render(render, ast.root);
    out += '?';
    return out;
}

// comma-space-joined names of set bits, in nomenclature index order
inline std::string list_classes(const LabelSet& labels, const Nomenclature& nom) {
    std::string out;
    for (std::size_t j = 0; j < nom.size(); ++j) {
        if (!labels.test(j)) continue;
        if (!out.empty()) out += ", ";
        out += nom.name_of(j);
    }
    return out.empty() ? "none" : out;
}

// Deterministic evaluator standing in for the language model: boolean
// evaluation for yes/no questions, class listing for land-cover ones.
inline std::string answer(const QuestionAst& ast, const LabelSet& labels, const Nomenclature& nom) {
    if (labels.size() != nom.size()) throw std::invalid_argument("answer: label length mismatch");
    if (ast.type == QuestionType::LandCover) return list_classes(labels, nom);
    auto eval = [&](auto&& self, int idx) -> bool {
        const QuestionAst::Node& n = ast.nodes[static_cast<std::size_t>(idx)];
        switch (n.op) {
            case QuestionAst::Node::Op::Present:
                return labels.test(static_cast<std::size_t>(n.class_id));
            case QuestionAst::Node::Op::And:
                return self(self, n.lhs) && self(self, n.rhs);
            case QuestionAst::Node::Op::Or:
                return self(self, n.lhs) || self(self, n.rhs);
        }
        return false;
    };
    return eval(eval, ast.root) ? "yes" : "no";
}

struct QuestionMix {
    double p_yesno = 0.807;  // remainder are land-cover listing questions
    double p_conj1 = 0.452;  // one conjunction, given yes/no
    double p_conj2 = 0.271;  // two conjunctions, given yes/no
};

struct QaRecord {
    std::int64_t sample_id = 0;
    std::string question;
    QuestionType type = QuestionType::YesNo;
    std::string answer;
    std::optional<std::string> predicted;
};

// Seeded question sampler. Question q of sample s depends only on
// (seed, s, q), so any subset regenerates identically.
inline std::vector<QaRecord> generate_questions(const LabelSet& labels, const Nomenclature& nom, int count,
                                                const QuestionMix& mix, std::uint64_t seed,
                                                std::int64_t sample_id = 0) {
    if (count < 1) throw std::invalid_argument("generate_questions: count must be >= 1");
    for (double p : {mix.p_yesno, mix.p_conj1, mix.p_conj2})
        if (p < 0.0 || p > 1.0) throw std::invalid_argument("generate_questions: probabilities must lie in [0,1]");
    if (mix.p_conj1 + mix.p_conj2 > 1.0 + 1e-12)
        throw std::invalid_argument("generate_questions: conjunction probabilities exceed 1");
    std::size_t max_leaves = 1;
    if (mix.p_conj1 > 0.0) max_leaves = 2;
    if (mix.p_conj2 > 0.0) max_leaves = 3;
    if (mix.p_yesno > 0.0 && nom.size() < max_leaves)
        throw std::invalid_argument("generate_questions: fewer distinct classes than question leaves needed");

    std::vector<QaRecord> records;
    records.reserve(static_cast<std::size_t>(count));
    std::vector<int> pool(nom.size());
    for (int q = 0; q < count; ++q) {
        Rng rng(derive_seed(seed, {kStreamQuestion, static_cast<std::uint64_t>(sample_id),
                                   static_cast<std::uint64_t>(q)}));
        QuestionAst ast;
        if (rng.uniform() < mix.p_yesno) {
            ast.type = QuestionType::YesNo;
            const double u = rng.uniform();
            const std::size_t leaves = u < mix.p_conj1 ? 2 : (u < mix.p_conj1 + mix.p_conj2 ? 3 : 1);
            detail::Segmentation seg;
            std::iota(pool.begin(), pool.end(), 0);
            for (std::size_t k = 0; k < leaves; ++k) {
                const std::size_t pick = k + static_cast<std::size_t>(rng.below(pool.size() - k));
                std::swap(pool[k], pool[pick]);
                seg.class_ids.push_back(pool[k]);
            }
            for (std::size_t k = 0; k + 1 < leaves; ++k) seg.op_is_and.push_back(rng.bernoulli(0.5));
            ast.root = detail::fold_with_precedence(ast, seg);
        } else {
            ast.type = QuestionType::LandCover;
        }
        ast.text = render_question(ast, nom);

        QaRecord rec;
        rec.sample_id = sample_id;
        rec.question = ast.text;
        rec.type = ast.type;
        rec.answer = answer(ast, labels, nom);
        records.push_back(std::move(rec));
    }
    return records;
}

// "detected class names [SEP] question" — the line handed to an external
// language model.
inline std::string build_prompt(const LabelSet& labels, const Nomenclature& nom, std::string_view question) {
    std::string out = list_classes(labels, nom);
    out += " [SEP] ";
    out += question;
    return out;
}

// Answers every question twice, once from the predicted labels and once
// from the ground truth, and scores exact matches.
inline VqaAccuracy evaluate_vqa(std::span<const LabelSet> pred_labels, std::span<const LabelSet> gt_labels,
                                std::span<const std::vector<QaRecord>> questions, const Nomenclature& nom) {
    if (pred_labels.size() != gt_labels.size() || pred_labels.size() != questions.size())
        throw std::invalid_argument("evaluate_vqa: per-sample lists must be aligned");
    std::vector<std::string> pred, gt;
    std::vector<QuestionType> types;
    for (std::size_t i = 0; i < questions.size(); ++i) {
        for (const QaRecord& rec : questions[i]) {
            const QuestionAst ast = parse_question(rec.question, nom);
            pred.push_back(answer(ast, pred_labels[i], nom));
            gt.push_back(answer(ast, gt_labels[i], nom));
            types.push_back(ast.type);
        }
    }
    return vqa_accuracy(pred, gt, types);
}

// --- JSONL interchange -----------------------------------------------------

inline nlohmann::json to_json(const QaRecord& rec) {
    nlohmann::json obj = {{"sample_id", rec.sample_id},
                          {"question", rec.question},
                          {"type", std::string(to_string(rec.type))},
                          {"answer", rec.answer}};
    if (rec.predicted) obj["predicted"] = *rec.predicted;
    return obj;
}

inline QaRecord qa_record_from_json(const nlohmann::json& obj) {
    QaRecord rec;
    rec.sample_id = obj.at("sample_id").get<std::int64_t>();
    rec.question = obj.at("question").get<std::string>();
    rec.type = question_type_from_string(obj.at("type").get<std::string>());
    rec.answer = obj.at("answer").get<std::string>();
    if (obj.contains("predicted")) rec.predicted = obj.at("predicted").get<std::string>();
    return rec;
}

inline void save_qa_jsonl(std::span<const std::vector<QaRecord>> per_sample, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& sample : per_sample)
        for (const QaRecord& rec : sample) out << to_json(rec).dump() << '\n';
}

inline std::vector<QaRecord> load_qa_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<QaRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(qa_record_from_json(nlohmann::json::parse(line)));
    }
    return records;
}

}  // namespace fuseqa
