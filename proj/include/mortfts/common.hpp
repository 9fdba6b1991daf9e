#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <compare>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mortfts {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Sex { Female, Male };

inline std::string_view to_string(Sex s) { return s == Sex::Female ? "F" : "M"; }

inline Sex parse_sex(std::string_view label) {
    if (label == "F" || label == "f" || label == "Female" || label == "female" || label == "FEMALE")
        return Sex::Female;
    if (label == "M" || label == "m" || label == "Male" || label == "male" || label == "MALE")
        return Sex::Male;
    throw Error("unrecognised sex label '" + std::string(label) + "' (expected F or M)");
}

/// Identifies one (group, sex) series inside a panel.
struct SeriesKey {
    std::string group;
    Sex sex = Sex::Female;

    auto operator<=>(const SeriesKey&) const = default;
    bool operator==(const SeriesKey&) const = default;
};

inline std::string to_string(const SeriesKey& k) { return k.group + "/" + std::string(to_string(k.sex)); }

/// Runs body(i) for i in [0, n). Implementations may run iterations concurrently; every
/// caller writes only to slot i of preallocated storage so results never depend on the order.
using ParallelFor = std::function<void(std::size_t n, const std::function<void(std::size_t)>& body)>;

inline void serial_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    for (std::size_t i = 0; i < n; ++i) body(i);
}

inline double rms(const Matrix& m) {
    if (m.size() == 0) return 0.0;
    return std::sqrt(m.squaredNorm() / static_cast<double>(m.size()));
}

}  // namespace mortfts
