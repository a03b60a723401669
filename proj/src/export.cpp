#include "mfc/export.hpp"

#include <json.hpp>

#include <cstdio>
#include <ostream>

namespace mfc {

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void field_to_csv(std::ostream& os, const RandomField& f) {
    os << "atom,scenario,dim,value\n";
    for (int i = 0; i < f.atoms; ++i)
        for (int k = 0; k < f.scenarios; ++k)
            for (int d = 0; d < f.dim; ++d)
                os << i << ',' << k << ',' << d << ',' << format_double(f.at(i, k, d)) << '\n';
}

void quadruple_to_csv(std::ostream& os, const OptimalQuadruple& quad) {
    os << "node,atom,scenario,dim,Y,Z,u\n";
    for (int j = 0; j < quad.Y.nodes(); ++j) {
        const int node = quad.Y.first_node + j;
        const RandomField& y = quad.Y.node[j];
        for (int i = 0; i < y.atoms; ++i)
            for (int k = 0; k < y.scenarios; ++k)
                for (int d = 0; d < y.dim; ++d)
                    os << node << ',' << i << ',' << k << ',' << d << ','
                       << format_double(y.at(i, k, d)) << ','
                       << format_double(quad.Z.node[j].at(i, k, d)) << ','
                       << format_double(quad.u.node[j].at(i, k, d)) << '\n';
    }
}

std::string quadruple_summary_json(const OptimalQuadruple& quad) {
    nlohmann::json j;
    auto norms = nlohmann::json::array();
    for (int k = 0; k < quad.Y.nodes(); ++k) {
        norms.push_back({{"node", quad.Y.first_node + k},
                         {"Y", hm_norm(quad.Y.node[k])},
                         {"Z", hm_norm(quad.Z.node[k])},
                         {"u", hm_norm(quad.u.node[k])}});
    }
    j["node_norms"] = norms;
    j["first_order_residual"] = quad.first_order_residual;
    j["converged"] = quad.log.converged;
    j["iterations"] = quad.log.iterations;
    j["method"] = quad.log.method;
    j["c0_warning"] = quad.log.c0_warning;
    j["residual_history"] = quad.log.residuals;
    return j.dump(2);
}

std::uint64_t config_hash(const std::string& canonical_json) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical_json) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace mfc
