#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "ahat/builder.hpp"
#include "ahat/ir.hpp"
#include "ahat/sim.hpp"

using namespace ahat;

namespace {

radical_sum rs(long p, long q = 1) { return radical_sum(Rat(p, q)); }

// minimal shell: one-channel at 0 on every token, channel 1 = token sign
transformer_ir shell_ir(int width) {
  transformer_ir t;
  t.width = width;
  t.alphabet = {"$", "a", "b", "c", "_"};
  t.padding_coeffs = {};
  t.embedding["$"] = {{0, Rat(1)}};
  t.embedding["a"] = {{0, Rat(1)}, {1, Rat(1)}};
  t.embedding["b"] = {{0, Rat(1)}, {1, Rat(-1)}};
  t.embedding["c"] = {{0, Rat(1)}};
  t.readout.rule = "sign";
  t.readout.channel = width - 1;
  return t;
}

}  // namespace

TEST_CASE("channel plan allocation") {
  channel_plan plan;
  CHECK(plan.add("one") == 0);
  CHECK(plan.add("hash", 4) == 1);
  CHECK(plan.add("flag") == 5);
  CHECK(plan.get("hash") == 1);
  CHECK(plan.length("hash") == 4);
  CHECK(plan.length("one") == 1);
  CHECK(plan.has("flag"));
  CHECK_FALSE(plan.has("missing"));
  CHECK(plan.width() == 6);
  CHECK_THROWS_AS((void)plan.add("one"), std::logic_error);
  CHECK_THROWS_AS((void)plan.get("missing"), std::logic_error);
  plan.pad_to(8);
  CHECK(plan.width() == 8);
  CHECK_THROWS_AS(plan.pad_to(4), std::logic_error);
}

TEST_CASE("square padding of reads") {
  std::vector<int> read = {3, 4};
  CHECK(pad_read_square(read, 0, 2) == 2);
  CHECK(read == std::vector<int>{3, 4, 0, 0});

  std::vector<int> nine = {1, 2, 3};
  CHECK(pad_read_square(nine, 0, 9) == 3);
  CHECK(nine.size() == 3);

  std::vector<int> nine_forced = {1};
  CHECK(pad_read_square(nine_forced, 0, 9, 1) == 4);
  CHECK(nine_forced.size() == 8);  // 7 ones appended

  CHECK(next_pow2(1) == 1);
  CHECK(next_pow2(3) == 4);
  CHECK(next_pow2(8) == 8);
  CHECK(is_perfect_square(0));
  CHECK(is_perfect_square(49));
  CHECK_FALSE(is_perfect_square(50));
}

TEST_CASE("seed layer adds constants wherever one is set") {
  transformer_ir t = shell_ir(6);
  t.body.push_back(make_seed({{2, Rat(5)}, {3, Rat(-1, 2)}}, 0, 6));
  run_result r = run_ir(t, "a");
  CHECK(r.residuals[0][2] == rs(5));
  CHECK(r.residuals[1][3] == rs(-1, 2));
  CHECK(validate_ir(t).empty() ==
        false);  // zero-padding warning only; no errors expected
  for (const auto& i : validate_ir(t)) CHECK_FALSE(i.error);
}

TEST_CASE("sign thresholds against a pre-seeded target") {
  // channel 1 holds the tested value; targets on 2 (>=0), 3 (>0), 4 (=0)
  transformer_ir t = shell_ir(6);
  t.embedding["c"] = {{0, Rat(1)}};  // value channel left at zero
  t.body.push_back(make_seed({{2, sign_threshold_seed(sign_test::nonneg)},
                              {3, sign_threshold_seed(sign_test::positive)},
                              {4, sign_threshold_seed(sign_test::zero)}},
                             0, 6));
  t.body.push_back(make_sign_threshold(1, 2, sign_test::nonneg, 6));
  t.body.push_back(make_sign_threshold(1, 3, sign_test::positive, 6));
  t.body.push_back(make_sign_threshold(1, 4, sign_test::zero, 6));

  run_result pos = run_ir(t, "a");  // value +1
  CHECK(pos.residuals[1][2] == rs(1));
  CHECK(pos.residuals[1][3] == rs(1));
  CHECK(pos.residuals[1][4] == rs(-1));

  run_result neg = run_ir(t, "b");  // value -1
  CHECK(neg.residuals[1][2] == rs(-1));
  CHECK(neg.residuals[1][3] == rs(-1));
  CHECK(neg.residuals[1][4] == rs(-1));

  run_result zer = run_ir(t, "c");  // value 0
  CHECK(zer.residuals[1][2] == rs(1));
  CHECK(zer.residuals[1][3] == rs(-1));
  CHECK(zer.residuals[1][4] == rs(1));
}

TEST_CASE("gated copies of a hash bundle") {
  // channels: 0 one, 1 gate, 2-3 hash seeds, 4-7 hash, 8-11 destination
  transformer_ir t;
  t.width = 12;
  t.alphabet = {"$", "a", "b", "_"};
  t.padding_coeffs = {};
  t.embedding["$"] = {{0, Rat(1)}};
  t.embedding["a"] = {{0, Rat(1)}, {1, Rat(1)}, {2, Rat(5)}, {3, Rat(1)}};
  t.embedding["b"] = {{0, Rat(1)}, {1, Rat(-1)}, {2, Rat(5)}, {3, Rat(1)}};
  t.body.push_back(make_gadget_layer(gadget_kind::ln_hash, {2, 3}, {4, 5, 6, 7}));
  // read: hash (norm 1) + gate (1) + two ones -> rho = 2
  std::vector<gated_copy> copies;
  for (int i = 0; i < 4; ++i) copies.push_back({i, 4, 8 + i, Rat(1), false});
  t.body.push_back(make_gated_copies({4, 5, 6, 7, 1, 0, 0}, Rat(2), 5, copies, 12));
  t.readout.rule = "sign";
  t.readout.channel = 8;

  run_result on = run_ir(t, "a");
  auto h5 = hash_of(Rat(5));
  for (int i = 0; i < 4; ++i) CHECK(on.residuals[1][8 + i] == h5[static_cast<std::size_t>(i)]);

  run_result off = run_ir(t, "b");
  for (int i = 0; i < 4; ++i) CHECK(off.residuals[1][8 + i].is_zero());

  // negated gate copies when the flag is -1
  transformer_ir t2 = t;
  std::vector<gated_copy> neg;
  for (int i = 0; i < 4; ++i) neg.push_back({i, 4, 8 + i, Rat(1, 2), true});
  t2.body[1] = make_gated_copies({4, 5, 6, 7, 1, 0, 0}, Rat(2), 5, neg, 12);
  run_result on2 = run_ir(t2, "b");
  for (int i = 0; i < 4; ++i)
    CHECK(on2.residuals[1][8 + i] == h5[static_cast<std::size_t>(i)].div_rat(Rat(2)));
  run_result off2 = run_ir(t2, "a");
  for (int i = 0; i < 4; ++i) CHECK(off2.residuals[1][8 + i].is_zero());
}

TEST_CASE("pattern tables implement exact boolean maps") {
  // inputs: channels 1 (p) and 2 (q); outputs: and, or, xor on 3, 4, 5
  transformer_ir t;
  t.width = 8;
  t.alphabet = {"$", "a", "b", "c", "d", "e", "_"};
  t.padding_coeffs = {};
  for (const char* tok : {"$", "a", "b", "c", "d", "e"}) t.embedding[tok] = {{0, Rat(1)}};
  t.embedding["a"][1] = Rat(1);
  t.embedding["a"][2] = Rat(1);
  t.embedding["b"][1] = Rat(1);
  t.embedding["b"][2] = Rat(-1);
  t.embedding["c"][1] = Rat(-1);
  t.embedding["c"][2] = Rat(1);
  t.embedding["d"][1] = Rat(-1);
  t.embedding["d"][2] = Rat(-1);
  // "e" leaves both inputs at zero
  t.body.push_back(make_pattern_ff({1, 2}, 0, 8, [](const std::vector<int>& p) {
    pattern_writes w;
    w.emplace_back(3, Rat(p[0] > 0 && p[1] > 0 ? 1 : -1));
    w.emplace_back(4, Rat(p[0] > 0 || p[1] > 0 ? 1 : -1));
    w.emplace_back(5, Rat((p[0] > 0) != (p[1] > 0) ? 1 : -1));
    return w;
  }));
  t.readout.rule = "sign";
  t.readout.channel = 3;

  auto tbl = [&](const char* w) {
    run_result r = run_ir(t, w);
    return std::array<radical_sum, 3>{r.residuals[1][3], r.residuals[1][4],
                                      r.residuals[1][5]};
  };
  auto aa = tbl("a");
  CHECK(aa[0] == rs(1));
  CHECK(aa[1] == rs(1));
  CHECK(aa[2] == rs(-1));
  auto bb = tbl("b");
  CHECK(bb[0] == rs(-1));
  CHECK(bb[1] == rs(1));
  CHECK(bb[2] == rs(1));
  auto cc = tbl("c");
  CHECK(cc[0] == rs(-1));
  CHECK(cc[1] == rs(1));
  CHECK(cc[2] == rs(1));
  auto dd = tbl("d");
  CHECK(dd[0] == rs(-1));
  CHECK(dd[1] == rs(-1));
  CHECK(dd[2] == rs(-1));
  // zero-valued inputs never fire any pattern
  auto ee = tbl("e");
  CHECK(ee[0].is_zero());
  CHECK(ee[1].is_zero());
  CHECK(ee[2].is_zero());
}

TEST_CASE("three-input majority table") {
  transformer_ir t;
  t.width = 8;
  t.alphabet = {"$", "a", "b", "_"};
  t.padding_coeffs = {};
  t.embedding["$"] = {{0, Rat(1)}, {1, Rat(1)}, {2, Rat(-1)}, {3, Rat(1)}};
  t.embedding["a"] = {{0, Rat(1)}, {1, Rat(1)}, {2, Rat(1)}, {3, Rat(-1)}};
  t.embedding["b"] = {{0, Rat(1)}, {1, Rat(-1)}, {2, Rat(-1)}, {3, Rat(1)}};
  t.body.push_back(make_pattern_ff({1, 2, 3}, 0, 8, [](const std::vector<int>& p) {
    int ones = 0;
    for (int x : p) ones += x > 0;
    return pattern_writes{{5, Rat(ones >= 2 ? 1 : -1)}};
  }));
  t.readout.rule = "sign";
  t.readout.channel = 5;

  run_result r = run_ir(t, "ab");
  CHECK(r.residuals[0][5] == rs(1));   // (+,-,+) -> majority 1
  CHECK(r.residuals[1][5] == rs(1));   // (+,+,-) -> 1
  CHECK(r.residuals[2][5] == rs(-1));  // (-,-,+) -> -1
}

TEST_CASE("attention scaffolding with inert padding heads") {
  // head 0 fetches the start token's sign channel; heads 1-3 are inert padding
  transformer_ir t = shell_ir(8);
  t.embedding["$"] = {{0, Rat(1)}, {1, Rat(1)}, {2, Rat(1)}};
  attention_sublayer att;
  att.read = {0, 1, 2};
  attention_head h0 = make_zero_head(mask_kind::causal, 1, 2, 3);
  // query the marker channel: the start token scores highest
  h0.wq.set(0, 0, Rat(1));
  h0.wk.set(0, 2, Rat(1));
  h0.wv.set(0, 1, Rat(2));
  att.heads.push_back(h0);
  pad_heads_to(att, 4);
  CHECK(att.heads.size() == 4);
  set_wo(att, 8, {{6, 0, 0, Rat(3)}});
  t.body.push_back(att);
  for (const auto& i : validate_ir(t)) CHECK_FALSE(i.error);

  run_result r = run_ir(t, "ab");
  // start token state <1,1,1>/sqrt(3): value = 2/sqrt(3), scaled by 3
  radical_sum expect = radical_sum::sqrt_rational(Rat(4, 3)) * rs(3);
  for (int p = 0; p < 3; ++p) CHECK(r.residuals[p][6] == expect);
  // inert heads leave every other channel untouched
  for (int p = 0; p < 3; ++p)
    for (int c : {3, 4, 5, 7}) CHECK(r.residuals[p][c].is_zero());
}
