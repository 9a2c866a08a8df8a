#include <stdio.h>
#include <string.h>
#include "nsedit.h"

#define CHECK(expr)                                                         \
    do {                                                                    \
        if (!(expr)) {                                                      \
            const char *msg = nse_last_error_message();                     \
            fprintf(stderr, "check failed: %s (%s)\n", #expr, msg ? msg : ""); \
            return 1;                                                       \
        }                                                                   \
    } while (0)

int main(void) {
    /* Keys along e1 and e2 in R^3 leave e3 as the null space. */
    const double keys[] = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
    NseMatrix *k0 = NULL;
    NseProjector *proj = NULL;
    CHECK(nse_matrix_new(3, 2, keys, &k0) == NSE_STATUS_OK);
    CHECK(nse_projector_build(k0, 1e-2, NSE_THRESHOLD_ABSOLUTE, &proj) == NSE_STATUS_OK);
    CHECK(nse_projector_retained_dim(proj) == 1);

    NseTrajectory *traj = NULL;
    CHECK(nse_experiment_run("batches = 2\nbatch_size = 3\n", &traj) == NSE_STATUS_OK);
    char *csv = NULL;
    CHECK(nse_trajectory_to_string(traj, NSE_FORMAT_CSV, &csv) == NSE_STATUS_OK);
    CHECK(strncmp(csv, "method,step,", 12) == 0);
    nse_string_free(csv);

    NseTrajectory *bad = NULL;
    CHECK(nse_experiment_run("no_such_key = 1", &bad) == NSE_STATUS_CONFIG);
    CHECK(strstr(nse_last_error_message(), "no_such_key") != NULL);

    nse_trajectory_free(traj);
    nse_projector_free(proj);
    nse_matrix_free(k0);
    printf("ok %s\n", nse_version());
    return 0;
}
