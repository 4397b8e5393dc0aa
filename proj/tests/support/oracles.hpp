#pragma once
// Reference computations written independently of the library code paths.

#include "alignedcut/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace testing_support {

using alignedcut::RowMatrixXd;
using alignedcut::VectorXd;

struct JacobiResult {
    VectorXd values;      // descending
    RowMatrixXd vectors;  // columns match values
};

/// Cyclic Jacobi rotations until every off-diagonal entry is below tol.
JacobiResult jacobi_eigh(const RowMatrixXd& s, double tol = 1e-14, int max_sweeps = 100);

/// Entries drawn from N(0, 1) with a local generator.
RowMatrixXd random_matrix(long rows, long cols, std::uint64_t seed);
RowMatrixXd random_symmetric(long n, std::uint64_t seed);
RowMatrixXd random_orthogonal(long n, std::uint64_t seed);

/// max over columns of min(|a - b|, |a + b|) entrywise.
double max_abs_diff_up_to_sign(const RowMatrixXd& a, const RowMatrixXd& b);

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);

/// Every regular file under dir, relative path -> contents.
std::vector<std::pair<std::string, std::string>> snapshot(const std::filesystem::path& dir);

}  // namespace testing_support
