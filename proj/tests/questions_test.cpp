#include <gtest/gtest.h>

#include <map>

#include "fuseqa/questions.hpp"
#include "fuseqa/rng.hpp"
#include "oracles.hpp"

using namespace fuseqa;

namespace {

// beaches before pastures so listing order matches the index order used in
// the prompt examples
Nomenclature test_nomenclature() {
    auto doc = nlohmann::json::parse(R"([
        {"name": "beaches", "level": 1, "parent_name": null},
        {"name": "pastures", "level": 1, "parent_name": null},
        {"name": "vineyards", "level": 1, "parent_name": null},
        {"name": "beach", "level": 1, "parent_name": null},
        {"name": "water bodies", "level": 1, "parent_name": null}
    ])");
    return load_nomenclature(doc);
}

Nomenclature rsvqa61() {
    static const Nomenclature nom = load_nomenclature_file(
        std::string(FUSEQA_DATA_DIR) + "/nomenclatures/rsvqa61.json", NomKind::RSVQA61);
    return nom;
}

TEST(ParseQuestion, SingleLeafWithArticle) {
    const auto nom = test_nomenclature();
    const auto ast = parse_question("is there a beach?", nom);
    EXPECT_EQ(ast.type, QuestionType::YesNo);
    EXPECT_EQ(ast.leaf_count(), 1);
    const auto& root = ast.nodes[static_cast<std::size_t>(ast.root)];
    EXPECT_EQ(root.op, QuestionAst::Node::Op::Present);
    EXPECT_EQ(root.class_id, *nom.index_of("beach"));
    EXPECT_EQ(ast.text, "is there a beach?");
}

TEST(ParseQuestion, AndBindsTighterThanOr) {
    const auto nom = test_nomenclature();
    const auto ast = parse_question("are there pastures and vineyards or beaches?", nom);
    ASSERT_EQ(ast.leaf_count(), 3);
    const auto& root = ast.nodes[static_cast<std::size_t>(ast.root)];
    ASSERT_EQ(root.op, QuestionAst::Node::Op::Or);
    const auto& left = ast.nodes[static_cast<std::size_t>(root.lhs)];
    const auto& right = ast.nodes[static_cast<std::size_t>(root.rhs)];
    EXPECT_EQ(left.op, QuestionAst::Node::Op::And);
    EXPECT_EQ(right.op, QuestionAst::Node::Op::Present);
    EXPECT_EQ(right.class_id, *nom.index_of("beaches"));
    EXPECT_EQ(ast.nodes[static_cast<std::size_t>(left.lhs)].class_id, *nom.index_of("pastures"));
    EXPECT_EQ(ast.nodes[static_cast<std::size_t>(left.rhs)].class_id, *nom.index_of("vineyards"));
}

TEST(ParseQuestion, UnknownClassUnderRsvqa61) {
    try {
        parse_question("is there a glacier?", rsvqa61());
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code, ParseError::Code::UnknownClass);
    }
}

TEST(ParseQuestion, MalformedQuestions) {
    const auto nom = test_nomenclature();
    for (const char* text : {"how many beaches?", "is there a beach", "are there?", ""}) {
        try {
            parse_question(text, nom);
            FAIL() << "expected ParseError for: " << text;
        } catch (const ParseError& e) {
            EXPECT_NE(e.code, ParseError::Code::UnknownClass) << text;
        }
    }
}

TEST(ParseQuestion, MoreThanTwoConjunctionsRejected) {
    const auto nom = test_nomenclature();
    try {
        parse_question("are there beaches and pastures and vineyards and beach?", nom);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.code, ParseError::Code::MoreThanTwoConjunctions);
    }
}

TEST(ParseQuestion, CaseInsensitiveAndWhitespaceTolerant) {
    const auto nom = test_nomenclature();
    const auto a = parse_question("Is There  A   BEACH?", nom);
    const auto b = parse_question("is there a beach?", nom);
    EXPECT_TRUE(a.same_structure(b));
    const auto lc = parse_question("What Land Cover  Classes Are Present?", nom);
    EXPECT_EQ(lc.type, QuestionType::LandCover);
}

TEST(ParseQuestion, ClassNamesContainingConjunctionsMatchGreedily) {
    const auto nom = rsvqa61();
    const auto single = parse_question("is there a road and rail networks and associated land?", nom);
    EXPECT_EQ(single.leaf_count(), 1);
    EXPECT_EQ(single.nodes[static_cast<std::size_t>(single.root)].class_id,
              *nom.index_of("road and rail networks and associated land"));

    const auto pair = parse_question("are there moors and heathland or pastures?", nom);
    EXPECT_EQ(pair.leaf_count(), 2);
    EXPECT_EQ(pair.nodes[static_cast<std::size_t>(pair.root)].op, QuestionAst::Node::Op::Or);
}

TEST(Answer, PresentLeaf) {
    const auto nom = test_nomenclature();
    const auto ast = parse_question("is there water bodies?", nom);
    EXPECT_EQ(answer(ast, LabelSet::of(nom.size(), {*nom.index_of("water bodies")}), nom), "yes");
    EXPECT_EQ(answer(ast, LabelSet(nom.size()), nom), "no");
}

TEST(Answer, PrecedenceExampleOnBeachesOnly) {
    const auto nom = test_nomenclature();
    const auto ast = parse_question("are there pastures and vineyards or beaches?", nom);
    EXPECT_EQ(answer(ast, LabelSet::of(nom.size(), {*nom.index_of("beaches")}), nom), "yes");
}

TEST(Answer, LandCoverListingAndNone) {
    const auto nom = test_nomenclature();
    const QuestionAst ast = parse_question("what land cover classes are present?", nom);
    EXPECT_EQ(answer(ast, LabelSet(nom.size()), nom), "none");
    EXPECT_EQ(answer(ast, LabelSet::of(nom.size(), {1, 0}), nom), "beaches, pastures");
}

// Every yes/no template with up to 3 leaves over the 5-class nomenclature,
// against the hand-written truth tables, for every label assignment; each
// question also has to survive a render/parse round trip.
TEST(Answer, ExhaustiveTruthTableAgreement) {
    const auto nom = test_nomenclature();
    const std::size_t n = nom.size();
    std::size_t checked = 0;
    for (int leaves = 1; leaves <= 3; ++leaves) {
        std::vector<int> ids(static_cast<std::size_t>(leaves));
        std::vector<bool> ops(static_cast<std::size_t>(leaves - 1));
        auto for_each_tuple = [&](auto&& self, int depth) -> void {
            if (depth == leaves) {
                const int op_combos = 1 << (leaves - 1);
                for (int mask = 0; mask < op_combos; ++mask) {
                    std::string text = "are there ";
                    for (int k = 0; k < leaves; ++k) {
                        if (k > 0) {
                            ops[static_cast<std::size_t>(k - 1)] = (mask >> (k - 1)) & 1;
                            text += ops[static_cast<std::size_t>(k - 1)] ? " and " : " or ";
                        }
                        text += nom.name_of(static_cast<std::size_t>(ids[static_cast<std::size_t>(k)]));
                    }
                    text += '?';
                    const QuestionAst ast = parse_question(text, nom);
                    EXPECT_EQ(render_question(ast, nom), text);
                    EXPECT_TRUE(parse_question(render_question(ast, nom), nom).same_structure(ast));
                    for (unsigned assignment = 0; assignment < (1u << n); ++assignment) {
                        LabelSet labels(n);
                        for (std::size_t j = 0; j < n; ++j) labels.set(j, (assignment >> j) & 1);
                        std::vector<bool> vals(static_cast<std::size_t>(leaves));
                        for (int k = 0; k < leaves; ++k)
                            vals[static_cast<std::size_t>(k)] =
                                labels.test(static_cast<std::size_t>(ids[static_cast<std::size_t>(k)]));
                        const bool expected = oracle::eval_template(vals, ops);
                        EXPECT_EQ(answer(ast, labels, nom), expected ? "yes" : "no") << text;
                        ++checked;
                    }
                }
                return;
            }
            for (std::size_t c = 0; c < n; ++c) {
                bool used = false;
                for (int k = 0; k < depth; ++k) used |= ids[static_cast<std::size_t>(k)] == static_cast<int>(c);
                if (used) continue;
                ids[static_cast<std::size_t>(depth)] = static_cast<int>(c);
                self(self, depth + 1);
            }
        };
        for_each_tuple(for_each_tuple, 0);
    }
    // 5*32 + 20*2*32 + 60*4*32 assignments
    EXPECT_EQ(checked, 9120u);
}

TEST(Answer, PureOrQuestionsAreMonotone) {
    const auto nom = test_nomenclature();
    const auto ast = parse_question("are there beaches or pastures or vineyards?", nom);
    Rng rng(107);
    for (int trial = 0; trial < 100; ++trial) {
        LabelSet base(nom.size());
        for (std::size_t j = 0; j < nom.size(); ++j) base.set(j, rng.bernoulli(0.4));
        const std::string before = answer(ast, base, nom);
        LabelSet more = base;
        more.set(rng.below(nom.size()), true);
        const std::string after = answer(ast, more, nom);
        if (before == "yes") EXPECT_EQ(after, "yes");
    }
}

TEST(GenerateQuestions, CountAndDeterminism) {
    const auto nom = test_nomenclature();
    const LabelSet labels = LabelSet::of(nom.size(), {0, 2});
    const auto a = generate_questions(labels, nom, 25, QuestionMix{}, 42, 7);
    const auto b = generate_questions(labels, nom, 25, QuestionMix{}, 42, 7);
    ASSERT_EQ(a.size(), 25u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].question, b[i].question);
        EXPECT_EQ(a[i].answer, b[i].answer);
        EXPECT_EQ(a[i].type, b[i].type);
    }
    const auto c = generate_questions(labels, nom, 25, QuestionMix{}, 43, 7);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_diff |= a[i].question != c[i].question;
    EXPECT_TRUE(any_diff);
}

TEST(GenerateQuestions, DegenerateMixGivesSingleLeafYesNo) {
    const auto nom = test_nomenclature();
    const auto records = generate_questions(LabelSet(nom.size()), nom, 50, QuestionMix{1.0, 0.0, 0.0}, 1, 0);
    for (const auto& rec : records) {
        EXPECT_EQ(rec.type, QuestionType::YesNo);
        EXPECT_EQ(parse_question(rec.question, nom).leaf_count(), 1);
    }
}

TEST(GenerateQuestions, MixConvergesWithinTwoPercent) {
    const auto nom = test_nomenclature();
    const LabelSet labels = LabelSet::of(nom.size(), {0});
    std::size_t yesno = 0, conj1 = 0, conj2 = 0;
    const int total = 10000;
    const auto records = generate_questions(labels, nom, total, QuestionMix{}, 2024, 0);
    for (const auto& rec : records) {
        if (rec.type != QuestionType::YesNo) continue;
        ++yesno;
        const int leaves = parse_question(rec.question, nom).leaf_count();
        conj1 += leaves == 2;
        conj2 += leaves == 3;
    }
    EXPECT_NEAR(double(yesno) / total, 0.807, 0.02);
    EXPECT_NEAR(double(conj1) / double(yesno), 0.452, 0.02);
    EXPECT_NEAR(double(conj2) / double(yesno), 0.271, 0.02);
}

TEST(GenerateQuestions, RoundTripsThroughParser) {
    const auto nom = rsvqa61();
    LabelSet labels(nom.size());
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto records = generate_questions(labels, nom, 100, QuestionMix{}, seed, 3);
        for (const auto& rec : records) {
            const QuestionAst ast = parse_question(rec.question, nom);
            EXPECT_EQ(render_question(ast, nom), rec.question);
        }
    }
}

TEST(GenerateQuestions, TooFewClassesRejected) {
    const auto nom = make_flat_nomenclature(2);
    EXPECT_THROW(generate_questions(LabelSet(2), nom, 5, QuestionMix{}, 0, 0), std::invalid_argument);
    // fine when the mix never asks for two conjunctions
    EXPECT_NO_THROW(generate_questions(LabelSet(2), nom, 5, QuestionMix{0.8, 0.4, 0.0}, 0, 0));
}

TEST(BuildPrompt, FormatAndCanonicalOrder) {
    const auto nom = test_nomenclature();
    const LabelSet labels = LabelSet::of(nom.size(), {1, 0});
    EXPECT_EQ(build_prompt(labels, nom, "is there a beach?"), "beaches, pastures [SEP] is there a beach?");
    EXPECT_EQ(build_prompt(LabelSet(nom.size()), nom, "is there a beach?"), "none [SEP] is there a beach?");
}

TEST(EvaluateVqa, PerfectPredictionsGiveFullAccuracy) {
    const auto nom = test_nomenclature();
    Rng rng(109);
    std::vector<LabelSet> gt;
    std::vector<std::vector<QaRecord>> questions;
    for (int i = 0; i < 6; ++i) {
        LabelSet ls(nom.size());
        for (std::size_t j = 0; j < nom.size(); ++j) ls.set(j, rng.bernoulli(0.5));
        questions.push_back(generate_questions(ls, nom, 25, QuestionMix{}, 5, i));
        gt.push_back(std::move(ls));
    }
    const auto acc = evaluate_vqa(gt, gt, questions, nom);
    EXPECT_DOUBLE_EQ(acc.global, 1.0);
    EXPECT_EQ(acc.total, 150u);
}

TEST(EvaluateVqa, UnreferencedBitDoesNotChangeAccuracy) {
    const auto nom = test_nomenclature();
    const LabelSet gt = LabelSet::of(nom.size(), {0});
    std::vector<std::vector<QaRecord>> questions = {
        {QaRecord{0, "is there a beach?", QuestionType::YesNo, "no", std::nullopt},
         QaRecord{0, "are there beaches?", QuestionType::YesNo, "yes", std::nullopt}}};
    LabelSet pred = gt;
    pred.set(*nom.index_of("vineyards"), true);  // no question mentions vineyards
    const auto acc = evaluate_vqa(std::vector<LabelSet>{pred}, std::vector<LabelSet>{gt}, questions, nom);
    EXPECT_DOUBLE_EQ(acc.global, 1.0);
}

TEST(EvaluateVqa, FlippedBitsInvertSingleLeafAnswers) {
    const auto nom = test_nomenclature();
    Rng rng(113);
    std::vector<LabelSet> gt, pred;
    std::vector<std::vector<QaRecord>> questions;
    for (int i = 0; i < 5; ++i) {
        LabelSet g(nom.size()), p(nom.size());
        for (std::size_t j = 0; j < nom.size(); ++j) {
            const bool bit = rng.bernoulli(0.5);
            g.set(j, bit);
            p.set(j, !bit);
        }
        questions.push_back(generate_questions(g, nom, 20, QuestionMix{1.0, 0.0, 0.0}, 11, i));
        gt.push_back(std::move(g));
        pred.push_back(std::move(p));
    }
    const auto acc = evaluate_vqa(pred, gt, questions, nom);
    ASSERT_TRUE(acc.yes_no.has_value());
    EXPECT_DOUBLE_EQ(*acc.yes_no, 0.0);
}

TEST(QaJsonl, RoundTrip) {
    const auto nom = test_nomenclature();
    std::vector<std::vector<QaRecord>> questions = {
        generate_questions(LabelSet::of(nom.size(), {0}), nom, 4, QuestionMix{}, 9, 0),
        generate_questions(LabelSet::of(nom.size(), {2}), nom, 4, QuestionMix{}, 9, 1)};
    const auto path = std::filesystem::temp_directory_path() / "fuseqa_qa_test.jsonl";
    save_qa_jsonl(questions, path.string());
    const auto flat = load_qa_jsonl(path.string());
    ASSERT_EQ(flat.size(), 8u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(flat[i].question, questions[0][i].question);
        EXPECT_EQ(flat[i].sample_id, 0);
        EXPECT_EQ(flat[i + 4].sample_id, 1);
    }
    std::filesystem::remove(path);
}

}  // namespace
