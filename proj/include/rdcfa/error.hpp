#pragma once

#include <stdexcept>
#include <string>

namespace rdcfa {

/// Base of every error thrown by the library. The category maps onto the CLI
/// exit code.
class Error : public std::runtime_error {
public:
    enum class Category { Generic = 1, Config = 2, Missing = 3, Shape = 4, Data = 5, Numeric = 6 };

    Error(Category category, const std::string& what) : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(Category::Config, what) {}
};

/// A referenced file or directory does not exist.
struct MissingError : Error {
    explicit MissingError(const std::string& what) : Error(Category::Missing, what) {}
};

/// Dimension/format disagreement, including checkpoint version mismatch.
struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(Category::Shape, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(Category::Data, what) {}
};

/// Non-finite or diverging values.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(Category::Numeric, what) {}
};

inline int exit_code(const Error& e) { return static_cast<int>(e.category()); }

}  // namespace rdcfa
