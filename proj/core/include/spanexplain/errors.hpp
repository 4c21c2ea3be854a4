#pragma once

#include <stdexcept>
#include <string>

namespace spanexplain {

// Tensor shape disagreement (matmul inner dims, elementwise operand shapes, ...).
class dimension_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Value outside an operation's mathematical domain (empty softmax input,
// label index out of range, layer norm on a length-1 vector).
class domain_error : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed user-facing input: dataset lines, token ids, CLI arguments.
class input_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent run configuration.
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or version-mismatched serialized artifact (checkpoint, report).
class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Optimization failure (non-finite gradient, named tensor in the message).
class training_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Paraphraser failure during adversarial attack; distinct from an
// unsuccessful (non-flipping) attack, which is a normal result.
class attack_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Broken internal invariant (caller misuse of the library contract).
class contract_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace spanexplain
