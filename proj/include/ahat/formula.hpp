#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ahat {

enum class index_kind { one, length, variable };

struct index_term {
  index_kind kind = index_kind::one;
  std::string name;  // variable only
};

enum class formula_kind {
  pred,     // Q<symbol>(a)
  eq,       // a = b
  leq,      // a <= b
  geq,      // a >= b
  bit,      // bit(a, b): b-th least significant bit of a
  conj,
  disj,
  neg,
  exists,   // var1
  forall,   // var1
  maj2      // var1, var2: strict majority of assignment pairs
};

struct formula;
using formula_ptr = std::unique_ptr<formula>;

struct formula {
  formula_kind kind;
  char symbol = 0;            // pred
  index_term a, b;            // atoms
  std::string var1, var2;     // binders
  std::vector<formula_ptr> kids;
  std::size_t src_pos = 0;    // offset of the node's first token in the source text
};

struct parse_error : std::runtime_error {
  std::size_t offset;
  parse_error(const std::string& what, std::size_t off)
      : std::runtime_error(what + " at offset " + std::to_string(off)), offset(off) {}
};

formula_ptr parse_formula(const std::string& text);
formula_ptr clone_formula(const formula& f);
std::string formula_str(const formula& f);

// environment as a stack; innermost binding of a name wins
using assignment = std::vector<std::pair<std::string, long>>;

bool eval_formula(const formula& f, const std::string& word, assignment& env);
bool eval_formula(const formula& f, const std::string& word);  // sentence

// (distinct variable names, depth of the syntactic tree)
std::pair<int, int> formula_metrics(const formula& f);

bool formula_closed(const formula& f);
bool formula_uses_bit(const formula& f);

// nonempty accepted words, shortest first, symbols in alphabet order
std::vector<std::string> enumerate_language(const formula& f, const std::string& alphabet,
                                            int max_n);

}  // namespace ahat
