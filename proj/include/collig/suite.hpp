// Config-driven verification suites behind the collig command-line tool:
// each suite re-runs one family of library invariants with seeded
// reproducibility and emits a machine-readable report (JSON) plus a per-check
// CSV.  Measure export for external plotting lives here too.
#pragma once

#include "collig/rx_measure.hpp"
#include "collig/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace collig {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// Knobs shared by every suite.  Defaults complete `verify all` in well under
/// two minutes while exercising every code branch (the trial batches pin one
/// diagonal invariant to 1, so the seam paths run on every default
/// invocation).
struct SuiteConfig {
  std::uint64_t seed = 2026;
  int n = 1;                   ///< rank of the colligations drawn by trials
  int m = 3;                   ///< auxiliary size of the drawn colligations
  real decay = 0.5;            ///< envelope for the seeded generator
  std::vector<cplx> lambda_grid;  ///< empty = the default 15-point grid
  int quad_order = 40;
  real tol = 1e-6;
  int trials = 20;
  std::string output_dir = ".";
};

/// The default lambda grid: {0, 1/4, 1/2, 3/4, 1} x {0, +-0.3i}.
[[nodiscard]] std::vector<cplx> default_lambda_grid();

/// Config with lambda_grid filled in (defaults applied).  Raises
/// InvalidConfig on tol <= 0, trials < 1, n < 1, m < n, decay outside (0,1),
/// or quad_order < 2; soft-warns on stderr when a grid point leaves the
/// closed strip 0 <= Re lambda <= 1.
[[nodiscard]] SuiteConfig validated(SuiteConfig config);

/// One executed check.  `pass` means residual <= threshold; a check that
/// throws a library error is recorded as failed with the message in params
/// and an infinite residual, so an internal inconsistency surfaces as a
/// failing record rather than a crash.
struct CheckRecord {
  std::string name;    ///< stable check id
  std::string params;  ///< ';'-separated parameter description
  real residual = 0.0;
  real threshold = 0.0;
  bool pass = false;
  real wall_ms = 0.0;
};

struct Report {
  std::string suite;
  std::vector<CheckRecord> records;
  bool overall_pass = false;  ///< AND of all record pass flags
  std::uint64_t seed = 0;
  std::string config_hash;  ///< 64-bit FNV-1a of the canonical config text
  std::string library_version;
};

/// Run one suite:
///   mellin      closed-form vs lattice transform for the factor measures,
///               unit mass, and the h = 1 seam continuity;
///   semigroup   homomorphism residual of the kernel composition over seeded
///               trial pairs;
///   markov      the two defining kernel residuals per trial;
///   canonical   two-route determinant agreement, double-coset invariance of
///               the diagonal, the kernel, and the fiber transform, and the
///               coordinate round-trip;
///   rn          Monte Carlo unit mean of the density ratio, the chain-rule
///               cocycle, and the diagonal fast path;
///   truncation  corner-truncation transform decrements against the dropped
///               tail product, with the Cauchy and limit checks;
///   norm        critical-line contraction bound and its refinement
///               stability per trial;
///   all         every suite above, records concatenated.
/// Deterministic for fixed (name, config): trials draw from
/// RngStream(config.seed, trial-index) and aggregation is order-independent,
/// so the COLLIG_THREADS pool size never changes a single output byte.
/// Raises InvalidConfig for an unknown name or invalid config.
[[nodiscard]] Report run_suite(const std::string& name, const SuiteConfig& config);

/// report.json content (wall_ms fields are the only run-to-run variation).
[[nodiscard]] std::string report_to_json(const Report& report);

/// checks.csv content: header "check_id,params,residual,threshold,pass" and
/// one row per record; byte-identical across reruns of the same config.
[[nodiscard]] std::string checks_to_csv(const Report& report);

/// Write report.json and checks.csv into output_dir (created if needed).
/// Raises InvalidConfig when the directory cannot be created or written.
void write_report(const Report& report, const std::string& output_dir);

/// Colligation fiber spec for measure export: a seeded draw probed at (x, u).
struct FiberSpec {
  std::uint64_t seed = 2026;
  int n = 1;
  int m = 3;
  real decay = 0.5;
  std::vector<real> x;  ///< empty = origin
  std::vector<real> u;  ///< empty = origin
  real tol = 1e-6;
};

/// Export a measure for plotting.  The path extension picks the format:
/// .json writes the measure document {atoms, grid}, .csv writes the
/// "s,density" table; anything else raises InvalidConfig.  I/O failure
/// raises InvalidConfig with the failing path.
void export_measure(const PhiParams& params, const std::string& path);
void export_measure(const XiParams& params, const std::string& path);

/// Fiber export.  The .csv route writes the assembled fiber density.  The
/// .json route writes the certified factored presentation instead: `atoms`
/// holds the single defining point mass (the coordinate atom with the
/// diagonal corrections stripped) and `grid` holds the unit-mass product of
/// the factor measures, with a top-level "assembly": "product" key recording
/// that the two parts compose by multiplicative convolution -- the document
/// shows the atom row and the density rows of the factorization explicitly,
/// which the assembled (folded) measure cannot.  Assembly runs the full
/// fiber-measure certification against the kernel before anything is
/// written.
void export_measure(const FiberSpec& spec, const std::string& path);

}  // namespace collig
