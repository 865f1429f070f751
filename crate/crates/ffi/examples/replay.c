/* Replays a scenario and prints agent-cohort metrics.
 *
 *   cc -Icrates/ffi/include crates/ffi/examples/replay.c \
 *      target/debug/libtriage_ffi.a -lpthread -ldl -lm -o replay
 *   ./replay scenarios/case_study.json
 */
#include <stdio.h>

#include "triage.h"

int main(int argc, char **argv) {
    if (argc < 2) {
        fprintf(stderr, "usage: %s SCENARIO\n", argv[0]);
        return 2;
    }
    TriageReplay *run = NULL;
    TriageStatus st = triage_replay_run(argv[1], 0, false, 0, &run);
    if (st != TRIAGE_STATUS_OK) {
        fprintf(stderr, "replay failed (%d): %s\n", st, triage_last_error());
        return 1;
    }
    TriageMetrics m;
    triage_replay_metrics(run, TRIAGE_COHORT_AGENT, &m);
    printf("incidents=%zu mtti=%.2f ela=%.3f eer=%.3f ar=%.3f violations=%zu\n", m.n_incidents, m.mtti_minutes,
           m.ela, m.eer, m.ar, triage_replay_audit_violations(run));
    triage_replay_free(run);
    return 0;
}
