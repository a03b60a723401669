#pragma once

#include "mfc/fbsde.hpp"

#include <iosfwd>
#include <string>

namespace mfc {

/// Floats rendered with 17 significant digits throughout.
std::string format_double(double v);

/// Columns: atom,scenario,dim,value
void field_to_csv(std::ostream& os, const RandomField& f);

/// Columns: node,atom,scenario,dim,Y,Z,u
void quadruple_to_csv(std::ostream& os, const OptimalQuadruple& quad);

/// Per-node norms, first-order residual and the convergence log.
std::string quadruple_summary_json(const OptimalQuadruple& quad);

/// FNV-1a over the canonical serialisation; embedded in every output file.
std::uint64_t config_hash(const std::string& canonical_json);

}  // namespace mfc
