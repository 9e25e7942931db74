#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "ahat/rational.hpp"

namespace ahat {

struct sparse_matrix {
  int rows = 0;
  int cols = 0;
  // sorted row-major; entries are nonzero
  std::vector<std::tuple<int, int, Rat>> entries;

  sparse_matrix() = default;
  sparse_matrix(int r, int c) : rows(r), cols(c) {}
  void set(int r, int c, const Rat& v);
  Rat at(int r, int c) const;
  void scale(const Rat& f);
};

enum class mask_kind { causal, unmasked };

struct attention_head {
  mask_kind mask = mask_kind::unmasked;
  sparse_matrix wq, wk, wv;  // cols = read width; wq/wk rows agree; wv rows = head_dim
};

struct attention_sublayer {
  std::vector<int> read;  // pre-norm channel selection; duplicates allowed
  std::optional<Rat> read_norm2;  // declared squared norm of every nonzero read
  std::vector<attention_head> heads;
  sparse_matrix wo;  // width x (heads * head_dim)
};

struct ff_sublayer {
  std::vector<int> read;
  sparse_matrix up;    // hidden x read width
  sparse_matrix down;  // width x hidden
};

enum class gadget_kind {
  ln_hash,      // read [a,b] -> out 4: normalize <a,b,-a,-b>
  quotient,     // read [hash x(4), hash y(4)] -> out 4: hash of floor(x/y)
  remainder,    // read [hash x(4), hash y(4)] -> out 4: hash of x - y*floor(x/y)
  hash_equal,   // read [hash(4), hash(4)] -> out 1: +1 if componentwise equal else -1
  affine_int,   // read [k hashes] -> out 4: hash of sum coeffs[i]*x_i + constant
  poly_int,     // read [hash(4)] -> out 4: hash of sum coeffs[i]*x^i
  bit_extract,  // read [hash x(4), hash j(4)] -> out 1: j-th least significant bit of x, as +-1
  hash_decode,  // read [hash(4)] -> out 1: decoded value, or its reciprocal in mode "inverse"
};

struct gadget_sublayer {
  gadget_kind kind;
  std::vector<int> read;
  std::vector<int> out;
  std::vector<Rat> coeffs;  // affine_int, poly_int
  Rat constant = Rat(0);    // affine_int
  std::string mode;         // hash_decode: "value" | "inverse"
  bool idealized = true;
};

using sublayer = std::variant<attention_sublayer, ff_sublayer, gadget_sublayer>;

enum class position_encoding_kind { none, inverse_index, index_over_length };

struct loop_spec {
  long c = 1;  // positive coefficient
  int d = 0;   // nonnegative exponent
};

struct readout_spec {
  std::string rule = "sign";   // "sign" | "argmax"
  int channel = 0;             // sign rule
  std::vector<int> channels;   // argmax rule: one logit channel per candidate
};

struct transformer_ir {
  int schema_version = 1;
  int width = 0;
  std::vector<std::string> alphabet;  // includes "$" and the blank
  position_encoding_kind position_encoding = position_encoding_kind::none;
  int pos_channel = -1;
  std::vector<long> padding_coeffs;  // padding token count p(n) = sum coeffs[i]*n^i
  std::map<std::string, std::map<int, Rat>> embedding;
  std::vector<sublayer> setup, body, epilogue;
  std::optional<loop_spec> loop;
  readout_spec readout;

  long padding_tokens(long n) const;
  long unroll_count(long total_length) const;  // 1 when loop is absent
  bool fully_causal() const;
};

inline constexpr const char* kBosToken = "$";
inline constexpr const char* kBlankToken = "_";

struct validation_issue {
  bool error = true;  // false = warning
  std::string path;
  std::string message;
};

std::vector<validation_issue> validate_ir(const transformer_ir& t);

// c * ceil(log2 N)^d
long unroll_depth(long c, int d, long total_length);

std::string serialize_ir(const transformer_ir& t);
transformer_ir deserialize_ir(const std::string& text);
void save_ir(const transformer_ir& t, const std::string& path);
transformer_ir load_ir(const std::string& path);

}  // namespace ahat
