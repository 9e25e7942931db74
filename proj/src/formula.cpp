#include "ahat/formula.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace ahat {

namespace {

enum class tok_kind { ident, number, dot, lparen, rparen, comma, amp, pipe, bang, le, ge, eq, end };

struct token {
  tok_kind kind;
  std::string text;
  std::size_t pos;
};

std::vector<token> lex(const std::string& s) {
  std::vector<token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (std::isalpha(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < s.size() && std::isalnum(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({tok_kind::ident, s.substr(i, j - i), start});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
      out.push_back({tok_kind::number, s.substr(i, j - i), start});
      i = j;
    } else if (c == '<' && i + 1 < s.size() && s[i + 1] == '=') {
      out.push_back({tok_kind::le, "<=", start});
      i += 2;
    } else if (c == '>' && i + 1 < s.size() && s[i + 1] == '=') {
      out.push_back({tok_kind::ge, ">=", start});
      i += 2;
    } else {
      tok_kind k;
      switch (c) {
        case '.': k = tok_kind::dot; break;
        case '(': k = tok_kind::lparen; break;
        case ')': k = tok_kind::rparen; break;
        case ',': k = tok_kind::comma; break;
        case '&': k = tok_kind::amp; break;
        case '|': k = tok_kind::pipe; break;
        case '!': k = tok_kind::bang; break;
        case '=': k = tok_kind::eq; break;
        default:
          throw parse_error(std::string("unexpected character '") + c + "'", start);
      }
      out.push_back({k, s.substr(i, 1), start});
      ++i;
    }
  }
  out.push_back({tok_kind::end, "", s.size()});
  return out;
}

bool is_keyword(const std::string& t) {
  return t == "E" || t == "A" || t == "M2" || t == "bit" || t == "n";
}

class parser {
 public:
  explicit parser(const std::string& text) : toks_(lex(text)) {}

  formula_ptr parse() {
    formula_ptr f = parse_or();
    expect(tok_kind::end, "trailing input");
    return f;
  }

 private:
  std::vector<token> toks_;
  std::size_t at_ = 0;

  const token& cur() const { return toks_[at_]; }
  const token& peek(std::size_t k = 1) const {
    return toks_[std::min(at_ + k, toks_.size() - 1)];
  }
  token take() { return toks_[at_++]; }
  void expect(tok_kind k, const char* what) {
    if (cur().kind != k) throw parse_error(std::string("expected ") + what, cur().pos);
    ++at_;
  }

  static formula_ptr node(formula_kind k, std::size_t pos) {
    auto f = std::make_unique<formula>();
    f->kind = k;
    f->src_pos = pos;
    return f;
  }

  formula_ptr parse_or() {
    formula_ptr lhs = parse_and();
    while (cur().kind == tok_kind::pipe) {
      std::size_t pos = take().pos;
      formula_ptr rhs = parse_and();
      auto f = node(formula_kind::disj, pos);
      f->kids.push_back(std::move(lhs));
      f->kids.push_back(std::move(rhs));
      lhs = std::move(f);
    }
    return lhs;
  }

  formula_ptr parse_and() {
    formula_ptr lhs = parse_unary();
    while (cur().kind == tok_kind::amp) {
      std::size_t pos = take().pos;
      formula_ptr rhs = parse_unary();
      auto f = node(formula_kind::conj, pos);
      f->kids.push_back(std::move(lhs));
      f->kids.push_back(std::move(rhs));
      lhs = std::move(f);
    }
    return lhs;
  }

  formula_ptr parse_unary() {
    if (cur().kind == tok_kind::bang) {
      std::size_t pos = take().pos;
      auto f = node(formula_kind::neg, pos);
      f->kids.push_back(parse_unary());
      return f;
    }
    if (cur().kind == tok_kind::ident) {
      const std::string& t = cur().text;
      if (t == "E" || t == "A") {
        std::size_t pos = take().pos;
        auto f = node(t == "E" ? formula_kind::exists : formula_kind::forall, pos);
        f->var1 = take_var();
        expect(tok_kind::dot, "'.'");
        f->kids.push_back(parse_or());  // quantifier body extends maximally
        return f;
      }
      if (t == "M2") {
        std::size_t pos = take().pos;
        auto f = node(formula_kind::maj2, pos);
        expect(tok_kind::lparen, "'('");
        f->var1 = take_var();
        expect(tok_kind::comma, "','");
        f->var2 = take_var();
        if (f->var1 == f->var2)
          throw parse_error("majority pair needs two distinct variables", pos);
        expect(tok_kind::rparen, "')'");
        expect(tok_kind::dot, "'.'");
        f->kids.push_back(parse_or());
        return f;
      }
    }
    return parse_atom();
  }

  std::string take_var() {
    if (cur().kind != tok_kind::ident || is_keyword(cur().text) || looks_pred(cur().text))
      throw parse_error("expected variable name", cur().pos);
    return take().text;
  }

  static bool looks_pred(const std::string& t) { return t.size() == 2 && t[0] == 'Q'; }

  formula_ptr parse_atom() {
    if (cur().kind == tok_kind::lparen) {
      take();
      formula_ptr f = parse_or();
      expect(tok_kind::rparen, "')'");
      return f;
    }
    if (cur().kind == tok_kind::ident && looks_pred(cur().text) &&
        peek().kind == tok_kind::lparen) {
      token t = take();
      auto f = node(formula_kind::pred, t.pos);
      f->symbol = t.text[1];
      expect(tok_kind::lparen, "'('");
      f->a = parse_index();
      expect(tok_kind::rparen, "')'");
      return f;
    }
    if (cur().kind == tok_kind::ident && cur().text == "bit") {
      std::size_t pos = take().pos;
      auto f = node(formula_kind::bit, pos);
      expect(tok_kind::lparen, "'('");
      f->a = parse_index();
      expect(tok_kind::comma, "','");
      f->b = parse_index();
      expect(tok_kind::rparen, "')'");
      return f;
    }
    // comparison atom
    std::size_t pos = cur().pos;
    index_term a = parse_index();
    formula_kind k;
    switch (cur().kind) {
      case tok_kind::le: k = formula_kind::leq; break;
      case tok_kind::ge: k = formula_kind::geq; break;
      case tok_kind::eq: k = formula_kind::eq; break;
      default:
        throw parse_error("expected comparison operator", cur().pos);
    }
    take();
    auto f = node(k, pos);
    f->a = a;
    f->b = parse_index();
    return f;
  }

  index_term parse_index() {
    if (cur().kind == tok_kind::number) {
      token t = take();
      if (t.text != "1") throw parse_error("only the constant 1 is allowed", t.pos);
      return {index_kind::one, ""};
    }
    if (cur().kind == tok_kind::ident) {
      if (cur().text == "n") {
        take();
        return {index_kind::length, ""};
      }
      if (!is_keyword(cur().text) && !looks_pred(cur().text))
        return {index_kind::variable, take().text};
    }
    throw parse_error("expected index term", cur().pos);
  }
};

long eval_index(const index_term& t, const std::string& word, const assignment& env,
                std::size_t at) {
  long n = static_cast<long>(word.size());
  if (n == 0) throw std::domain_error("index evaluated on the empty word");
  switch (t.kind) {
    case index_kind::one: return 1;
    case index_kind::length: return n;
    case index_kind::variable:
      for (auto it = env.rbegin(); it != env.rend(); ++it)
        if (it->first == t.name) return it->second;
      throw std::domain_error("unbound variable '" + t.name + "' at offset " +
                              std::to_string(at));
  }
  throw std::logic_error("bad index term");
}

void collect_names(const formula& f, std::set<std::string>& names) {
  if (f.kind == formula_kind::exists || f.kind == formula_kind::forall) names.insert(f.var1);
  if (f.kind == formula_kind::maj2) {
    names.insert(f.var1);
    names.insert(f.var2);
  }
  if (f.a.kind == index_kind::variable) names.insert(f.a.name);
  if (f.b.kind == index_kind::variable) names.insert(f.b.name);
  for (const auto& k : f.kids) collect_names(*k, names);
}

void collect_free(const formula& f, std::vector<std::string>& bound,
                  std::set<std::string>& free) {
  auto check = [&](const index_term& t) {
    if (t.kind == index_kind::variable &&
        std::find(bound.begin(), bound.end(), t.name) == bound.end())
      free.insert(t.name);
  };
  check(f.a);
  check(f.b);
  std::size_t pushed = 0;
  if (f.kind == formula_kind::exists || f.kind == formula_kind::forall) {
    bound.push_back(f.var1);
    pushed = 1;
  } else if (f.kind == formula_kind::maj2) {
    bound.push_back(f.var1);
    bound.push_back(f.var2);
    pushed = 2;
  }
  for (const auto& k : f.kids) collect_free(*k, bound, free);
  bound.resize(bound.size() - pushed);
}

std::string index_str(const index_term& t) {
  switch (t.kind) {
    case index_kind::one: return "1";
    case index_kind::length: return "n";
    case index_kind::variable: return t.name;
  }
  return "?";
}

}  // namespace

formula_ptr parse_formula(const std::string& text) { return parser(text).parse(); }

formula_ptr clone_formula(const formula& f) {
  auto c = std::make_unique<formula>();
  c->kind = f.kind;
  c->symbol = f.symbol;
  c->a = f.a;
  c->b = f.b;
  c->var1 = f.var1;
  c->var2 = f.var2;
  c->src_pos = f.src_pos;
  for (const auto& k : f.kids) c->kids.push_back(clone_formula(*k));
  return c;
}

std::string formula_str(const formula& f) {
  switch (f.kind) {
    case formula_kind::pred:
      return std::string("Q") + f.symbol + "(" + index_str(f.a) + ")";
    case formula_kind::eq: return index_str(f.a) + " = " + index_str(f.b);
    case formula_kind::leq: return index_str(f.a) + " <= " + index_str(f.b);
    case formula_kind::geq: return index_str(f.a) + " >= " + index_str(f.b);
    case formula_kind::bit: return "bit(" + index_str(f.a) + "," + index_str(f.b) + ")";
    case formula_kind::conj:
      return "(" + formula_str(*f.kids[0]) + " & " + formula_str(*f.kids[1]) + ")";
    case formula_kind::disj:
      return "(" + formula_str(*f.kids[0]) + " | " + formula_str(*f.kids[1]) + ")";
    case formula_kind::neg: {
      const formula& c = *f.kids[0];
      bool atom = c.kids.empty();
      return atom ? "!" + formula_str(c) : "!(" + formula_str(c) + ")";
    }
    case formula_kind::exists: return "E " + f.var1 + ". " + formula_str(*f.kids[0]);
    case formula_kind::forall: return "A " + f.var1 + ". " + formula_str(*f.kids[0]);
    case formula_kind::maj2:
      return "M2(" + f.var1 + "," + f.var2 + "). " + formula_str(*f.kids[0]);
  }
  return "?";
}

bool eval_formula(const formula& f, const std::string& word, assignment& env) {
  long n = static_cast<long>(word.size());
  switch (f.kind) {
    case formula_kind::pred: {
      long m = eval_index(f.a, word, env, f.src_pos);
      if (m < 1 || m > n) throw std::domain_error("position out of range");
      return word[static_cast<std::size_t>(m - 1)] == f.symbol;
    }
    case formula_kind::eq:
      return eval_index(f.a, word, env, f.src_pos) == eval_index(f.b, word, env, f.src_pos);
    case formula_kind::leq:
      return eval_index(f.a, word, env, f.src_pos) <= eval_index(f.b, word, env, f.src_pos);
    case formula_kind::geq:
      return eval_index(f.a, word, env, f.src_pos) >= eval_index(f.b, word, env, f.src_pos);
    case formula_kind::bit: {
      long i = eval_index(f.a, word, env, f.src_pos);
      long j = eval_index(f.b, word, env, f.src_pos);
      if (j < 1) throw std::domain_error("bit position must be at least 1");
      if (j > 62) return false;
      return ((i >> (j - 1)) & 1) != 0;
    }
    case formula_kind::conj:
      return eval_formula(*f.kids[0], word, env) && eval_formula(*f.kids[1], word, env);
    case formula_kind::disj:
      return eval_formula(*f.kids[0], word, env) || eval_formula(*f.kids[1], word, env);
    case formula_kind::neg: return !eval_formula(*f.kids[0], word, env);
    case formula_kind::exists: {
      for (long m = 1; m <= n; ++m) {
        env.emplace_back(f.var1, m);
        bool ok = eval_formula(*f.kids[0], word, env);
        env.pop_back();
        if (ok) return true;
      }
      return false;
    }
    case formula_kind::forall: {
      for (long m = 1; m <= n; ++m) {
        env.emplace_back(f.var1, m);
        bool ok = eval_formula(*f.kids[0], word, env);
        env.pop_back();
        if (!ok) return false;
      }
      return true;
    }
    case formula_kind::maj2: {
      long count = 0;
      for (long i = 1; i <= n; ++i) {
        for (long j = 1; j <= n; ++j) {
          env.emplace_back(f.var1, i);
          env.emplace_back(f.var2, j);
          if (eval_formula(*f.kids[0], word, env)) ++count;
          env.pop_back();
          env.pop_back();
        }
      }
      return 2 * count > n * n;  // strict majority of all n^2 pairs
    }
  }
  throw std::logic_error("bad formula node");
}

bool eval_formula(const formula& f, const std::string& word) {
  assignment env;
  return eval_formula(f, word, env);
}

std::pair<int, int> formula_metrics(const formula& f) {
  std::set<std::string> names;
  collect_names(f, names);
  int depth = 1;
  for (const auto& k : f.kids) depth = std::max(depth, 1 + formula_metrics(*k).second);
  return {static_cast<int>(names.size()), depth};
}

bool formula_closed(const formula& f) {
  std::vector<std::string> bound;
  std::set<std::string> free;
  collect_free(f, bound, free);
  return free.empty();
}

bool formula_uses_bit(const formula& f) {
  if (f.kind == formula_kind::bit) return true;
  for (const auto& k : f.kids)
    if (formula_uses_bit(*k)) return true;
  return false;
}

std::vector<std::string> enumerate_language(const formula& f, const std::string& alphabet,
                                            int max_n) {
  std::vector<std::string> out;
  if (alphabet.empty()) return out;
  for (int len = 1; len <= max_n; ++len) {
    std::string w(static_cast<std::size_t>(len), alphabet[0]);
    std::vector<std::size_t> idx(static_cast<std::size_t>(len), 0);
    while (true) {
      for (int i = 0; i < len; ++i)
        w[static_cast<std::size_t>(i)] = alphabet[idx[static_cast<std::size_t>(i)]];
      if (eval_formula(f, w)) out.push_back(w);
      int i = len - 1;
      while (i >= 0 && idx[static_cast<std::size_t>(i)] + 1 == alphabet.size()) {
        idx[static_cast<std::size_t>(i)] = 0;
        --i;
      }
      if (i < 0) break;
      ++idx[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

}  // namespace ahat
