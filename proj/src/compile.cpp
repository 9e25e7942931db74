#include "ahat/compile.hpp"

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ahat {

namespace {

// dominance coefficient: kDom^2 strictly exceeds every sum of hash-match scores
// in play, so flag agreement always outranks hash agreement
constexpr long kDom = 8;
constexpr int kMaxVars = 12;

bool quantifier_node(formula_kind k) {
  return k == formula_kind::exists || k == formula_kind::forall ||
         k == formula_kind::maj2;
}

bool comparison_node(formula_kind k) {
  return k == formula_kind::eq || k == formula_kind::leq || k == formula_kind::geq;
}

bool connective_node(formula_kind k) {
  return k == formula_kind::conj || k == formula_kind::disj || k == formula_kind::neg;
}

struct node_rec {
  const formula* f = nullptr;
  int id = 0;
  int level = 1;
};

struct build_ctx {
  std::string alphabet;
  channel_plan plan;
  std::map<std::string, int> var_slot;
  std::map<const formula*, int> node_id;
  std::vector<node_rec> nodes;  // preorder
  int k = 0;
};

void collect_nodes(build_ctx& c, const formula& f) {
  int id = static_cast<int>(c.nodes.size());
  c.nodes.push_back({&f, id, 1});
  c.node_id[&f] = id;
  auto touch = [&](const std::string& name) {
    if (!c.var_slot.count(name)) {
      int slot = static_cast<int>(c.var_slot.size());
      c.var_slot[name] = slot;
    }
  };
  auto touch_term = [&](const index_term& t) {
    if (t.kind == index_kind::variable) touch(t.name);
  };
  switch (f.kind) {
    case formula_kind::pred:
      if (c.alphabet.find(f.symbol) == std::string::npos)
        throw std::domain_error(std::string("compile: predicate symbol '") + f.symbol +
                                "' is not in the alphabet");
      touch_term(f.a);
      break;
    case formula_kind::eq:
    case formula_kind::leq:
    case formula_kind::geq:
      touch_term(f.a);
      touch_term(f.b);
      break;
    case formula_kind::bit:
      throw std::domain_error("compile: bit atoms have no translation");
    case formula_kind::exists:
    case formula_kind::forall:
      touch(f.var1);
      break;
    case formula_kind::maj2:
      touch(f.var1);
      touch(f.var2);
      break;
    default:
      break;
  }
  for (const auto& kid : f.kids) collect_nodes(c, *kid);
}

int assign_levels(build_ctx& c, const formula& f) {
  int lvl = 1;
  for (const auto& kid : f.kids) lvl = std::max(lvl, assign_levels(c, *kid) + 1);
  c.nodes[c.node_id.at(&f)].level = lvl;
  return lvl;
}

std::vector<int> bundle(int base) { return {base, base + 1, base + 2, base + 3}; }

std::vector<int> bundle2(int a, int b) {
  return {a, a + 1, a + 2, a + 3, b, b + 1, b + 2, b + 3};
}

// channel holding the hash of a term's zero-based value (value m stored as
// the hash of m - 1, matching the digit representation)
int term_hash(const build_ctx& c, const index_term& t) {
  switch (t.kind) {
    case index_kind::one:
      return c.plan.get("hash.zero");
    case index_kind::length:
      return c.plan.get("hash.nm1");
    case index_kind::variable:
      return c.plan.get("dig." + std::to_string(c.var_slot.at(t.name)));
  }
  throw std::logic_error("compile: unknown index term");
}

// incremental pre-norm read whose squared norm is known by construction:
// hash bundles contribute 1, flag and result channels contribute 1 each
struct read_builder {
  std::vector<int> slots;
  long norm2 = 0;

  int push1(int ch) {
    slots.push_back(ch);
    norm2 += 1;
    return static_cast<int>(slots.size()) - 1;
  }
  int push4(int base) {
    int pos = static_cast<int>(slots.size());
    for (int r = 0; r < 4; ++r) slots.push_back(base + r);
    norm2 += 1;
    return pos;
  }
};

// head matching a 4-slot query hash against a 4-slot key hash, with a
// dominance flag pair deciding which token class may win at all
attention_head match_head(int q_pos, int k_pos, int dom_q, int dom_k, int v_pos,
                          long rho, int head_dim, int read_size) {
  attention_head h;
  h.mask = mask_kind::unmasked;
  h.wq = sparse_matrix(5, read_size);
  h.wk = sparse_matrix(5, read_size);
  h.wv = sparse_matrix(head_dim, read_size);
  for (int r = 0; r < 4; ++r) {
    h.wq.set(r, q_pos + r, Rat(rho));
    h.wk.set(r, k_pos + r, Rat(rho));
  }
  h.wq.set(4, dom_q, Rat(rho * kDom));
  h.wk.set(4, dom_k, Rat(rho * kDom));
  h.wv.set(0, v_pos, Rat(rho));
  return h;
}

// head averaging a result channel over the padding tokens that agree with the
// querying token on the given digit bundles (query and key read the same slots)
attention_head agg_head(const std::vector<int>& digit_pos, int one_pos, int blank_pos,
                        int v_pos, long rho, int head_dim, int read_size) {
  int m = static_cast<int>(digit_pos.size());
  attention_head h;
  h.mask = mask_kind::unmasked;
  h.wq = sparse_matrix(4 * m + 1, read_size);
  h.wk = sparse_matrix(4 * m + 1, read_size);
  h.wv = sparse_matrix(head_dim, read_size);
  for (int b = 0; b < m; ++b) {
    for (int r = 0; r < 4; ++r) {
      h.wq.set(4 * b + r, digit_pos[b] + r, Rat(rho));
      h.wk.set(4 * b + r, digit_pos[b] + r, Rat(rho));
    }
  }
  h.wq.set(4 * m, one_pos, Rat(rho * kDom));
  h.wk.set(4 * m, blank_pos, Rat(rho * kDom));
  h.wv.set(0, v_pos, Rat(rho));
  return h;
}

}  // namespace

compiled_artifact compile_formula(const formula& input, const std::string& alphabet) {
  if (alphabet.empty()) throw std::domain_error("compile: empty alphabet");
  {
    std::set<char> seen;
    for (char ch : alphabet) {
      if (ch == '$' || ch == '_')
        throw std::domain_error("compile: alphabet uses a reserved token");
      if (!seen.insert(ch).second)
        throw std::domain_error("compile: duplicate alphabet symbol");
    }
  }
  if (formula_uses_bit(input))
    throw std::domain_error("compile: bit atoms have no translation");
  if (!formula_closed(input))
    throw std::domain_error("compile: sentence has free variables");

  formula_ptr owned = clone_formula(input);
  if (formula_metrics(*owned).first == 0) {
    // constant sentences still get one digit: wrap in a vacuous existential
    auto wrap = std::make_unique<formula>();
    wrap->kind = formula_kind::exists;
    wrap->var1 = "#0";
    wrap->kids.push_back(std::move(owned));
    owned = std::move(wrap);
  }
  auto metrics = formula_metrics(*owned);

  build_ctx c;
  c.alphabet = alphabet;
  collect_nodes(c, *owned);
  assign_levels(c, *owned);
  c.k = static_cast<int>(c.var_slot.size());
  if (c.k != metrics.first) throw std::logic_error("compile: variable census mismatch");
  if (c.k > kMaxVars) throw std::domain_error("compile: too many variables");

  // residual layout
  channel_plan& plan = c.plan;
  int ch_one = plan.add("one");
  int ch_zero = plan.add("zero");
  int ch_posinv = plan.add("pos_inv");
  int ch_blank = plan.add("blank_pm");
  int ch_input = plan.add("input_pm");
  for (char ch : alphabet) plan.add("tok." + std::string(1, ch));
  int hash_pos = plan.add("hash.pos", 4);
  int hash_zero = plan.add("hash.zero", 4);
  int hash_np1 = plan.add("hash.np1", 4);
  int hash_n = plan.add("hash.n", 4);
  plan.add("hash.nm1", 4);
  int hash_lpos = plan.add("hash.lpos", 4);
  int hash_off = plan.add("hash.off", 4);
  int ch_empty = plan.add("empty_pm");
  int hash_empty = plan.add("hash.empty", 4);
  int hash_base = plan.add("hash.base", 4);
  for (int s = 0; s < c.k; ++s) plan.add("dig." + std::to_string(s), 4);
  for (int t = 1; t < c.k; ++t) plan.add("quo." + std::to_string(t), 4);
  for (const auto& nr : c.nodes) {
    plan.add("res." + std::to_string(nr.id));
    if (quantifier_node(nr.f->kind)) plan.add("acc." + std::to_string(nr.id));
    if (nr.f->kind == formula_kind::leq || nr.f->kind == formula_kind::geq) {
      plan.add("cmp1." + std::to_string(nr.id), 4);
      plan.add("cmp2." + std::to_string(nr.id), 4);
    }
  }

  int max_level = 1;
  for (const auto& nr : c.nodes) max_level = std::max(max_level, nr.level);
  long max_heads = 1;
  for (int lvl = 1; lvl <= max_level; ++lvl) {
    long cnt = 0;
    for (const auto& nr : c.nodes)
      if (nr.level == lvl &&
          (nr.f->kind == formula_kind::pred || quantifier_node(nr.f->kind)))
        ++cnt;
    max_heads = std::max(max_heads, next_pow2(cnt));
  }
  int width = static_cast<int>(((plan.width() + max_heads - 1) / max_heads) * max_heads);
  plan.pad_to(width);

  transformer_ir t;
  t.width = width;
  t.alphabet.push_back(kBosToken);
  for (char ch : alphabet) t.alphabet.push_back(std::string(1, ch));
  t.alphabet.push_back(kBlankToken);
  t.position_encoding = position_encoding_kind::inverse_index;
  t.pos_channel = ch_posinv;
  t.padding_coeffs.assign(c.k + 1, 0);
  t.padding_coeffs[c.k] = 1;

  auto res_ch = [&](const formula* f) {
    return plan.get("res." + std::to_string(c.node_id.at(f)));
  };
  auto acc_ch = [&](const formula* f) {
    return plan.get("acc." + std::to_string(c.node_id.at(f)));
  };

  // embedding: the one-flag everywhere, class flags, one +-1 flag per symbol
  for (const auto& tok : t.alphabet) {
    auto& e = t.embedding[tok];
    e[ch_one] = Rat(1);
    e[ch_blank] = Rat(tok == kBlankToken ? 1 : -1);
    e[ch_input] = Rat((tok != kBosToken && tok != kBlankToken) ? 1 : -1);
    for (char ch : alphabet)
      e[plan.get("tok." + std::string(1, ch))] =
          Rat(tok == std::string(1, ch) ? 1 : -1);
  }

  // prologue: position hashes, word-length hash, per-token assignment digits
  auto& setup = t.setup;
  setup.push_back(make_gadget_layer(gadget_kind::ln_hash, {ch_one, ch_posinv},
                                    bundle(hash_pos)));
  setup.push_back(make_gadget_layer(gadget_kind::ln_hash, {ch_zero, ch_one},
                                    bundle(hash_zero)));
  {
    // locate the last input token: its position hash scores highest under a
    // constant query, and the input flag keeps every other class below it
    read_builder rb;
    rb.push4(hash_pos);
    int inp_pos = rb.push1(ch_input);
    int one_pos = static_cast<int>(rb.slots.size());
    long rho = pad_read_square(rb.slots, ch_one, rb.norm2, 1);
    attention_sublayer att;
    att.read = rb.slots;
    att.read_norm2 = Rat(rho * rho);
    attention_head h;
    h.mask = mask_kind::unmasked;
    h.wq = sparse_matrix(5, static_cast<int>(rb.slots.size()));
    h.wk = sparse_matrix(5, static_cast<int>(rb.slots.size()));
    h.wv = sparse_matrix(width, static_cast<int>(rb.slots.size()));
    h.wq.set(0, one_pos, Rat(rho));
    h.wq.set(2, one_pos, Rat(-rho));
    h.wq.set(4, one_pos, Rat(rho * kDom));
    for (int r = 0; r < 4; ++r) h.wk.set(r, r, Rat(rho));
    h.wk.set(4, inp_pos, Rat(rho * kDom));
    for (int r = 0; r < 4; ++r) h.wv.set(r, r, Rat(rho));
    att.heads.push_back(std::move(h));
    set_wo(att, width,
           {{hash_np1 + 0, 0, 0}, {hash_np1 + 1, 0, 1}, {hash_np1 + 2, 0, 2},
            {hash_np1 + 3, 0, 3}});
    setup.push_back(std::move(att));
  }
  setup.push_back(make_gadget_layer(gadget_kind::affine_int, bundle(hash_np1),
                                    bundle(hash_n), {Rat(1)}, Rat(-1)));
  setup.push_back(make_gadget_layer(gadget_kind::affine_int, bundle(hash_np1),
                                    bundle(plan.get("hash.nm1")), {Rat(1)}, Rat(-2)));
  // digit divisor max(n, 1): the empty word has no assignments, but the digit
  // split must stay well-defined so every hash bundle keeps unit norm
  setup.push_back(make_gadget_layer(gadget_kind::hash_equal,
                                    bundle2(hash_n, hash_zero), {ch_empty}));
  setup.push_back(make_gadget_layer(gadget_kind::ln_hash, {ch_empty, ch_one},
                                    bundle(hash_empty)));
  setup.push_back(make_gadget_layer(gadget_kind::affine_int,
                                    bundle2(hash_n, hash_empty), bundle(hash_base),
                                    {Rat(1), Rat(1, 2)}, Rat(1, 2)));
  setup.push_back(make_gadget_layer(gadget_kind::affine_int, bundle(hash_pos),
                                    bundle(hash_lpos), {Rat(1)}, Rat(-2)));
  setup.push_back(make_gadget_layer(gadget_kind::affine_int,
                                    bundle2(hash_pos, hash_np1), bundle(hash_off),
                                    {Rat(1), Rat(-1)}, Rat(-1)));
  {
    int cur = hash_off;
    for (int s = 0; s < c.k; ++s) {
      setup.push_back(make_gadget_layer(gadget_kind::remainder, bundle2(cur, hash_base),
                                        bundle(plan.get("dig." + std::to_string(s)))));
      if (s + 1 < c.k) {
        int nxt = plan.get("quo." + std::to_string(s + 1));
        setup.push_back(
            make_gadget_layer(gadget_kind::quotient, bundle2(cur, hash_base), bundle(nxt)));
        cur = nxt;
      }
    }
  }

  // one group per syntactic level, leaves first
  auto& body = t.body;
  for (int lvl = 1; lvl <= max_level; ++lvl) {
    std::vector<const node_rec*> cmps, preds, quants, conns;
    for (const auto& nr : c.nodes) {
      if (nr.level != lvl) continue;
      if (comparison_node(nr.f->kind)) cmps.push_back(&nr);
      else if (nr.f->kind == formula_kind::pred) preds.push_back(&nr);
      else if (quantifier_node(nr.f->kind)) quants.push_back(&nr);
      else if (connective_node(nr.f->kind)) conns.push_back(&nr);
    }

    // order comparisons: a <= b on zero-based values x, y is floor(x/(y+1)) = 0
    std::vector<sublayer> st1, st2, st3;
    for (const node_rec* nr : cmps) {
      const formula& f = *nr->f;
      int res = res_ch(&f);
      if (f.kind == formula_kind::eq) {
        st3.push_back(make_gadget_layer(
            gadget_kind::hash_equal, bundle2(term_hash(c, f.a), term_hash(c, f.b)),
            {res}));
        continue;
      }
      const index_term& lo = (f.kind == formula_kind::leq) ? f.a : f.b;
      const index_term& hi = (f.kind == formula_kind::leq) ? f.b : f.a;
      int c1 = plan.get("cmp1." + std::to_string(nr->id));
      int c2 = plan.get("cmp2." + std::to_string(nr->id));
      st1.push_back(make_gadget_layer(gadget_kind::affine_int, bundle(term_hash(c, hi)),
                                      bundle(c1), {Rat(1)}, Rat(1)));
      st2.push_back(make_gadget_layer(gadget_kind::quotient,
                                      bundle2(term_hash(c, lo), c1), bundle(c2)));
      st3.push_back(
          make_gadget_layer(gadget_kind::hash_equal, bundle2(c2, hash_zero), {res}));
    }
    for (auto& s : st1) body.push_back(std::move(s));
    for (auto& s : st2) body.push_back(std::move(s));
    for (auto& s : st3) body.push_back(std::move(s));

    // quantifier accumulators pre-seeded so one sign decides the threshold:
    // exists reads 1 + avg > 0, forall reads avg - 1 >= 0, majority avg > 0
    std::vector<std::pair<int, Rat>> seeds;
    for (const node_rec* nr : quants) {
      switch (nr->f->kind) {
        case formula_kind::exists:
          seeds.push_back({acc_ch(nr->f), Rat(1)});
          seeds.push_back({res_ch(nr->f), Rat(-1)});
          break;
        case formula_kind::forall:
          seeds.push_back({acc_ch(nr->f), Rat(-1)});
          seeds.push_back({res_ch(nr->f), Rat(1)});
          break;
        default:  // strict majority
          seeds.push_back({res_ch(nr->f), Rat(-1)});
          break;
      }
    }
    if (!seeds.empty()) body.push_back(make_seed(seeds, ch_one, width));

    // all token fetches and quantifier averages of this level share one
    // sublayer; the read is norm-uniform because every channel in it holds a
    // unit hash or a +-1 flag at every token
    if (!preds.empty() || !quants.empty()) {
      read_builder rb;
      struct pred_slots {
        int q, key, val, out;
      };
      struct quant_slots {
        std::vector<int> digits;
        int val, out;
      };
      std::vector<pred_slots> ps;
      std::vector<quant_slots> qs;
      for (const node_rec* nr : preds) {
        pred_slots p;
        p.q = rb.push4(term_hash(c, nr->f->a));
        p.key = rb.push4(hash_lpos);
        p.val = rb.push1(plan.get("tok." + std::string(1, nr->f->symbol)));
        p.out = res_ch(nr->f);
        ps.push_back(p);
      }
      for (const node_rec* nr : quants) {
        quant_slots q;
        std::set<int> bound{c.var_slot.at(nr->f->var1)};
        if (nr->f->kind == formula_kind::maj2) bound.insert(c.var_slot.at(nr->f->var2));
        for (int s = 0; s < c.k; ++s)
          if (!bound.count(s)) q.digits.push_back(rb.push4(plan.get("dig." + std::to_string(s))));
        q.val = rb.push1(res_ch(nr->f->kids[0].get()));
        q.out = acc_ch(nr->f);
        qs.push_back(q);
      }
      int inp_pos = rb.push1(ch_input);
      int blank_pos = rb.push1(ch_blank);
      int one_pos = static_cast<int>(rb.slots.size());
      long rho = pad_read_square(rb.slots, ch_one, rb.norm2, 1);
      int n_heads = static_cast<int>(next_pow2(static_cast<long>(ps.size() + qs.size())));
      int head_dim = width / n_heads;
      attention_sublayer att;
      att.read = rb.slots;
      att.read_norm2 = Rat(rho * rho);
      std::vector<wo_write> wo;
      int read_size = static_cast<int>(rb.slots.size());
      for (const auto& p : ps) {
        wo.push_back({p.out, static_cast<int>(att.heads.size()), 0, Rat(1)});
        att.heads.push_back(
            match_head(p.q, p.key, one_pos, inp_pos, p.val, rho, head_dim, read_size));
      }
      for (const auto& q : qs) {
        wo.push_back({q.out, static_cast<int>(att.heads.size()), 0, Rat(1)});
        att.heads.push_back(
            agg_head(q.digits, one_pos, blank_pos, q.val, rho, head_dim, read_size));
      }
      pad_heads_to(att, n_heads);
      set_wo(att, width, wo);
      body.push_back(std::move(att));
    }

    // boolean connectives of this level share one lookup-table sublayer
    if (!conns.empty()) {
      read_builder rb;
      struct conn_slots {
        const formula* f;
        std::vector<int> in;
      };
      std::vector<conn_slots> cs;
      for (const node_rec* nr : conns) {
        conn_slots cc{nr->f, {}};
        for (const auto& kid : nr->f->kids) cc.in.push_back(rb.push1(res_ch(kid.get())));
        cs.push_back(std::move(cc));
      }
      int one_pos = static_cast<int>(rb.slots.size());
      long rho = pad_read_square(rb.slots, ch_one, rb.norm2, 1);
      ff_sublayer ff = make_ff_shell(rb.slots, width);
      for (const auto& cc : cs) {
        int arity = static_cast<int>(cc.in.size());
        for (int m = 0; m < (1 << arity); ++m) {
          std::vector<int> bits(arity);
          for (int i = 0; i < arity; ++i) bits[i] = (m >> i) & 1 ? 1 : -1;
          bool val = false;
          switch (cc.f->kind) {
            case formula_kind::conj:
              val = bits[0] > 0 && bits[1] > 0;
              break;
            case formula_kind::disj:
              val = bits[0] > 0 || bits[1] > 0;
              break;
            default:
              val = bits[0] < 0;
              break;
          }
          std::vector<std::pair<int, Rat>> up;
          for (int i = 0; i < arity; ++i) up.push_back({cc.in[i], Rat(rho * bits[i])});
          if (arity > 1) up.push_back({one_pos, Rat(-rho * (arity - 1))});
          add_ff_unit(ff, up, {{res_ch(cc.f), Rat(val ? 1 : -1)}});
        }
      }
      body.push_back(std::move(ff));
    }

    for (const node_rec* nr : quants) {
      sign_test test = nr->f->kind == formula_kind::forall ? sign_test::nonneg
                                                           : sign_test::positive;
      body.push_back(make_sign_threshold(acc_ch(nr->f), res_ch(nr->f), test, width));
    }
  }

  t.readout.rule = "sign";
  t.readout.channel = res_ch(c.nodes[0].f);

  for (const auto& issue : validate_ir(t))
    if (issue.error)
      throw std::logic_error("compile: emitted network is invalid: " + issue.path +
                             ": " + issue.message);

  compiled_artifact art;
  art.transformer = std::move(t);
  art.plan = plan;
  art.var_count = c.k;
  art.node_depth = metrics.second;
  return art;
}

long assignment_index(const std::vector<long>& components, long n) {
  if (n < 1) throw std::domain_error("assignment_index: word length must be positive");
  long v = 1;
  long base = 1;
  for (long x : components) {
    if (x < 1 || x > n)
      throw std::domain_error("assignment_index: component out of range");
    if (base > (1L << 60) / std::max(n, 2L))
      throw std::domain_error("assignment_index: index overflow");
    v += (x - 1) * base;
    base *= n;
  }
  return v;
}

std::vector<long> assignment_components(long v, long n, int k) {
  if (n < 1) throw std::domain_error("assignment_components: word length must be positive");
  if (k < 0) throw std::domain_error("assignment_components: negative arity");
  if (v < 1) throw std::domain_error("assignment_components: index out of range");
  long u = v - 1;
  std::vector<long> out;
  for (int t = 0; t < k; ++t) {
    out.push_back(u % n + 1);
    u /= n;
  }
  if (u != 0) throw std::domain_error("assignment_components: index out of range");
  return out;
}

int dependency_depth(const transformer_ir& t) {
  std::vector<const sublayer*> seq;
  for (const auto* blk : {&t.setup, &t.body, &t.epilogue})
    for (const auto& s : *blk) seq.push_back(&s);
  std::vector<std::set<int>> rd(seq.size()), wr(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (const auto* a = std::get_if<attention_sublayer>(seq[i])) {
      rd[i].insert(a->read.begin(), a->read.end());
      for (const auto& [r, cc, v] : a->wo.entries) wr[i].insert(r);
    } else if (const auto* f = std::get_if<ff_sublayer>(seq[i])) {
      rd[i].insert(f->read.begin(), f->read.end());
      for (const auto& [r, cc, v] : f->down.entries) wr[i].insert(r);
    } else if (const auto* g = std::get_if<gadget_sublayer>(seq[i])) {
      rd[i].insert(g->read.begin(), g->read.end());
      wr[i].insert(g->out.begin(), g->out.end());
    }
  }
  int best = 0;
  std::vector<int> dep(seq.size(), 1);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      bool hit = false;
      for (int ch : wr[j])
        if (rd[i].count(ch)) {
          hit = true;
          break;
        }
      if (hit) dep[i] = std::max(dep[i], dep[j] + 1);
    }
    best = std::max(best, dep[i]);
  }
  return best;
}

}  // namespace ahat
