// Acceptance suite runner: executes the numbered criteria and prints one
// pass/fail line per criterion. Exit status is the number of failures.

#include "aet/verify.hpp"

#include <cstring>

int main(int argc, char** argv) {
    int threads = 2;
    std::vector<int> criteria;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) {
            threads = std::atoi(argv[++i]);
        } else if (std::strcmp(argv[i], "--criteria") == 0 && i + 1 < argc) {
            const char* p = argv[++i];
            while (*p) {
                criteria.push_back(std::atoi(p));
                const char* comma = std::strchr(p, ',');
                if (!comma) break;
                p = comma + 1;
            }
        } else {
            std::fprintf(stderr, "usage: %s [--threads N] [--criteria 1,2,...]\n", argv[0]);
            return 64;
        }
    }
    aet::VerifySuite suite(threads);
    const auto results = suite.run(criteria);
    int failures = 0;
    for (const auto& r : results)
        if (!r.pass) ++failures;
    std::printf("acceptance: %zu criteria, %d failed\n", results.size(), failures);
    return failures;
}
