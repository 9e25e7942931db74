#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ahat/compile.hpp"
#include "ahat/formula.hpp"
#include "ahat/ir.hpp"
#include "ahat/sim.hpp"

using namespace ahat;

namespace {

compiled_artifact build(const std::string& text, const std::string& alphabet) {
  auto f = parse_formula(text);
  return compile_formula(*f, alphabet);
}

bool net_accepts(const compiled_artifact& art, const std::string& word) {
  return run_ir(art.transformer, word).decision;
}

std::vector<std::string> words_upto(const std::string& alphabet, int max_n) {
  std::vector<std::string> out, cur{""};
  for (int n = 1; n <= max_n; ++n) {
    std::vector<std::string> next;
    for (const auto& w : cur)
      for (char ch : alphabet) next.push_back(w + ch);
    out.insert(out.end(), next.begin(), next.end());
    cur = next;
  }
  return out;
}

// relocate every channel upward by `offset` inside a wider network; the
// decision must not depend on where the layout sits
transformer_ir shift_channels(const transformer_ir& src, int offset) {
  transformer_ir t = src;
  t.width = src.width + offset;
  t.pos_channel = src.pos_channel + offset;
  t.embedding.clear();
  for (const auto& [tok, cols] : src.embedding)
    for (const auto& [ch, v] : cols) t.embedding[tok][ch + offset] = v;
  t.readout.channel += offset;
  for (auto& ch : t.readout.channels) ch += offset;
  for (auto* blk : {&t.setup, &t.body, &t.epilogue}) {
    for (auto& s : *blk) {
      if (auto* a = std::get_if<attention_sublayer>(&s)) {
        for (auto& ch : a->read) ch += offset;
        int n_heads = static_cast<int>(a->heads.size());
        int old_hd = src.width / n_heads;
        int new_hd = t.width / n_heads;
        for (auto& h : a->heads) h.wv.rows = new_hd;
        sparse_matrix wo(t.width, n_heads * new_hd);
        for (const auto& [r, c, v] : a->wo.entries)
          wo.set(r + offset, (c / old_hd) * new_hd + c % old_hd, v);
        a->wo = wo;
      } else if (auto* f = std::get_if<ff_sublayer>(&s)) {
        for (auto& ch : f->read) ch += offset;
        sparse_matrix down(t.width, f->down.cols);
        for (const auto& [r, c, v] : f->down.entries) down.set(r + offset, c, v);
        f->down = down;
      } else if (auto* g = std::get_if<gadget_sublayer>(&s)) {
        for (auto& ch : g->read) ch += offset;
        for (auto& ch : g->out) ch += offset;
      }
    }
  }
  return t;
}

const std::vector<std::string> kCorpus = {
    "E i. Qa(i)",
    "A i. Qa(i)",
    "E i. (Qa(i) & i = n)",
    "A i. (Qa(i) | Qb(i))",
    "E i. A j. (Qa(j) | j <= i)",
    "M2(i,j). Qa(i)",
    "M2(i,j). (Qa(i) | Qb(j))",
    "E i. E j. (Qa(i) & Qb(j) & i <= j)",
    "!(E i. Qb(i))",
    "E i. ((E i. Qb(i)) & Qa(i))",
    "A i. i >= 1",
    "E i. i = 1",
    "1 = 1",
    "n <= 1",
};

}  // namespace

TEST_CASE("assignment indexing round-trips") {
  CHECK(assignment_index({1, 1}, 3) == 1);
  CHECK(assignment_index({2, 3}, 3) == 8);
  CHECK(assignment_components(8, 3, 2) == std::vector<long>{2, 3});
  CHECK(assignment_index({3, 3}, 3) == 9);
  CHECK(assignment_index({}, 5) == 1);
  for (long n : {1L, 2L, 4L}) {
    for (long v = 1; v <= n * n * n; ++v)
      CHECK(assignment_index(assignment_components(v, n, 3), n) == v);
  }
  CHECK_THROWS_AS(assignment_index({0, 1}, 3), std::domain_error);
  CHECK_THROWS_AS(assignment_index({4}, 3), std::domain_error);
  CHECK_THROWS_AS(assignment_index({1}, 0), std::domain_error);
  CHECK_THROWS_AS(assignment_components(10, 3, 2), std::domain_error);
  CHECK_THROWS_AS(assignment_components(0, 3, 2), std::domain_error);
}

TEST_CASE("existential sentence reference words") {
  auto art = build("E i. Qa(i)", "ab");
  CHECK(art.var_count == 1);
  CHECK(art.transformer.padding_coeffs == std::vector<long>{0, 1});
  CHECK(net_accepts(art, "ab"));
  CHECK(net_accepts(art, "ba"));
  CHECK(net_accepts(art, "a"));
  CHECK_FALSE(net_accepts(art, "bb"));
  CHECK_FALSE(net_accepts(art, "b"));
}

TEST_CASE("universal and majority reference words") {
  auto all_a = build("A i. Qa(i)", "ab");
  CHECK(net_accepts(all_a, "aaa"));
  CHECK(net_accepts(all_a, "a"));
  CHECK_FALSE(net_accepts(all_a, "aab"));
  CHECK_FALSE(net_accepts(all_a, "b"));

  auto maj = build("M2(i,j). Q1(i)", "01");
  CHECK(maj.var_count == 2);
  CHECK(maj.transformer.padding_coeffs == std::vector<long>{0, 0, 1});
  CHECK(maj.transformer.padding_tokens(3) == 9);
  CHECK(net_accepts(maj, "110"));
  CHECK_FALSE(net_accepts(maj, "100"));
  CHECK(net_accepts(maj, "1"));
  CHECK_FALSE(net_accepts(maj, "0"));
}

TEST_CASE("compiled artifacts stay total on the empty word") {
  // reference decisions are scoped to nonempty words, but every artifact must
  // still run the start marker alone to a decision without a runtime fault
  for (const auto& text : kCorpus) {
    CAPTURE(text);
    auto art = build(text, "ab");
    run_result r = run_ir(art.transformer, "");
    CHECK(r.total_length == 1);
  }
}

TEST_CASE("compiled sentences agree with direct evaluation") {
  auto words = words_upto("ab", 3);
  for (const auto& text : kCorpus) {
    CAPTURE(text);
    auto f = parse_formula(text);
    auto art = compile_formula(*f, "ab");
    for (const auto& w : words) {
      CAPTURE(w);
      CHECK(net_accepts(art, w) == eval_formula(*f, w));
    }
  }
}

TEST_CASE("three-variable sentence agrees with direct evaluation") {
  const std::string text = "E i. E j. E l. (Qa(i) & Qb(j) & l = 1)";
  auto f = parse_formula(text);
  auto art = compile_formula(*f, "ab");
  CHECK(art.var_count == 3);
  for (const auto& w : words_upto("ab", 2)) {
    CAPTURE(w);
    CHECK(net_accepts(art, w) == eval_formula(*f, w));
  }
}

TEST_CASE("threshold boundaries are exact") {
  auto ex = build("E i. Qa(i)", "ab");
  // a single witness among four positions clears the strict threshold
  CHECK(net_accepts(ex, "bbab"));
  CHECK_FALSE(net_accepts(ex, "bbbb"));

  auto fa = build("A i. Qa(i)", "ab");
  // all but one witness still fails the universal
  CHECK_FALSE(net_accepts(fa, "aaab"));
  CHECK(net_accepts(fa, "aaaa"));

  auto mj = build("M2(i,j). Qa(i)", "ab");
  // an exact half of the assignment pairs is not a strict majority
  CHECK_FALSE(net_accepts(mj, "ab"));
  CHECK(net_accepts(mj, "aab"));
  CHECK_FALSE(net_accepts(mj, "abb"));
}

TEST_CASE("constant sentences compile via a vacuous quantifier") {
  auto art = build("1 = 1", "ab");
  CHECK(art.var_count == 1);  // the added quantifier carries the digit
  CHECK(net_accepts(art, "a"));
  CHECK(net_accepts(art, "bb"));
  auto neg = build("!(1 = 1)", "ab");
  CHECK_FALSE(net_accepts(neg, "a"));
}

TEST_CASE("untranslatable sentences are rejected") {
  auto bit = parse_formula("E i. E j. bit(i, j)");
  CHECK_THROWS_AS(compile_formula(*bit, "ab"), std::domain_error);
  auto open = parse_formula("Qa(i)");
  CHECK_THROWS_AS(compile_formula(*open, "ab"), std::domain_error);
  auto ok = parse_formula("E i. Qa(i)");
  CHECK_THROWS_AS(compile_formula(*ok, "bc"), std::domain_error);  // symbol missing
  CHECK_THROWS_AS(compile_formula(*ok, ""), std::domain_error);
  CHECK_THROWS_AS(compile_formula(*ok, "aa"), std::domain_error);
  CHECK_THROWS_AS(compile_formula(*ok, "a$"), std::domain_error);
}

TEST_CASE("emitted network passes validation and keeps a disjoint layout") {
  for (const auto& text : {std::string("E i. A j. (Qa(j) | j <= i)"),
                           std::string("M2(i,j). (Qa(i) | Qb(j))")}) {
    CAPTURE(text);
    auto art = build(text, "ab");
    for (const auto& issue : validate_ir(art.transformer)) CHECK_FALSE(issue.error);
    std::set<int> used;
    for (const auto& [name, slot] : art.plan.slots()) {
      for (int ch = slot.first; ch < slot.first + slot.second; ++ch) {
        CAPTURE(name);
        CHECK(ch >= 0);
        CHECK(ch < art.transformer.width);
        CHECK(used.insert(ch).second);
      }
    }
  }
}

TEST_CASE("idealized steps are refused in strict mode") {
  auto art = build("E i. Qa(i)", "ab");
  run_options opts;
  opts.strict_sublayers = true;
  CHECK_THROWS_AS(run_ir(art.transformer, "ab", opts), std::domain_error);
}

TEST_CASE("quantifier averages tie across the padding block") {
  auto art = build("E i. Qa(i)", "ab");
  auto r = run_ir(art.transformer, "ab");
  // two assignments tie under the existential query; certification never aborts
  CHECK(r.stats.multi_ties > 0);
  CHECK(r.stats.gadget_faults == 0);
}

TEST_CASE("decision survives channel relocation") {
  for (const auto& text :
       {std::string("E i. (Qa(i) & i = n)"), std::string("M2(i,j). Qa(i)")}) {
    CAPTURE(text);
    auto art = build(text, "ab");
    auto moved = shift_channels(art.transformer, 64);
    for (const auto& issue : validate_ir(moved)) CHECK_FALSE(issue.error);
    for (const auto& w : {"a", "ab", "bba"}) {
      CAPTURE(w);
      CHECK(run_ir(moved, w).decision == run_ir(art.transformer, w).decision);
    }
  }
}

TEST_CASE("emitted depth stays linear in sentence depth") {
  for (const auto& text : kCorpus) {
    CAPTURE(text);
    auto art = build(text, "ab");
    int chain = dependency_depth(art.transformer);
    CHECK(chain <= 4 * art.node_depth + 2 * art.var_count + 12);
    CHECK(chain >= 2);
  }
}
