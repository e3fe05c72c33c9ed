#ifndef GNOMES_AWARENESS_HPP
#define GNOMES_AWARENESS_HPP

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>

namespace gnomes {

using GnomeId = std::uint32_t;

// A gnome's awareness of one proposal: Confused, Unaware, or the radius of
// the I-know-that-they-know neighborhood. Total order for min():
// Confused < Unaware < Radius(0) < Radius(1) < ...
// Radii above the diameter bound are legal (the counter keeps running).
class Awareness {
public:
    enum class Kind : std::uint8_t { Confused, Unaware, Radius };

    constexpr Awareness() : kind_(Kind::Unaware), radius_(0) {}

    static constexpr Awareness confused() { return Awareness(Kind::Confused, 0); }
    static constexpr Awareness unaware() { return Awareness(Kind::Unaware, 0); }
    static constexpr Awareness radius(std::int32_t k) {
        return k < 0 ? unaware() : Awareness(Kind::Radius, k);
    }

    constexpr Kind kind() const { return kind_; }
    constexpr bool is_confused() const { return kind_ == Kind::Confused; }
    constexpr bool is_unaware() const { return kind_ == Kind::Unaware; }
    constexpr bool is_radius() const { return kind_ == Kind::Radius; }

    // Radius value; only meaningful for Radius.
    constexpr std::int32_t value() const { return radius_; }

    // Numeric view with Unaware = -1, used by the recurrence. Confused has
    // no numeric form and must be checked first.
    constexpr std::int32_t as_int() const { return kind_ == Kind::Radius ? radius_ : -1; }

    friend constexpr std::strong_ordering operator<=>(Awareness a, Awareness b) {
        if (a.kind_ != b.kind_)
            return static_cast<int>(a.kind_) <=> static_cast<int>(b.kind_);
        return a.radius_ <=> b.radius_;
    }
    friend constexpr bool operator==(Awareness a, Awareness b) = default;

    // Trace-file token: "C", "U", or the radius digits.
    std::string token() const {
        switch (kind_) {
        case Kind::Confused: return "C";
        case Kind::Unaware: return "U";
        default: return std::to_string(radius_);
        }
    }

    static Awareness from_token(const std::string& s) {
        if (s == "C") return confused();
        if (s == "U") return unaware();
        std::size_t pos = 0;
        int k = std::stoi(s, &pos);
        if (pos != s.size() || k < 0) throw std::invalid_argument("bad awareness token: " + s);
        return radius(k);
    }

private:
    constexpr Awareness(Kind k, std::int32_t r) : kind_(k), radius_(r) {}

    Kind kind_;
    std::int32_t radius_;
};

inline constexpr Awareness min(Awareness a, Awareness b) { return a < b ? a : b; }

} // namespace gnomes

#endif
