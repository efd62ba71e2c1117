#pragma once

#include <stdexcept>
#include <string>

namespace scialloc {

/// Input outside the domain of an operation (bad parameters, infeasible allocation).
class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An iterative method failed to converge or hit a numerical dead end.
class NumericalFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// No positive salary makes the researcher indifferent to an offer.
class UnboundedCompensation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace scialloc
