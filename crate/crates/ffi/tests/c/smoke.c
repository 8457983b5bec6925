#include <math.h>
#include <stdio.h>
#include <string.h>

#include "peakgate.h"

static const char *CONFIG =
    "{\"version\": 1, \"system\": {\"builtin\": \"running-example\"}, \"scenario\": \"c\","
    " \"objective\": {\"coordinate\": 1},"
    " \"certificate\": {\"lyapunov\": {\"v\": \"running-example\", \"ratio\": \"closed-form\","
    " \"construction\": {\"continuous\": {\"alpha\": \"identity\"}}}}}";

static int halves(void *user, size_t k, double *out) {
    (void)user;
    *out = k == 0 ? 0.25 : pow(0.5, (double)k);
    return 0;
}

int main(void) {
    PgProblem *problem = NULL;
    PgSolution *solution = NULL;
    if (pg_problem_from_json(CONFIG, &problem) != PG_STATUS_OK) {
        fprintf(stderr, "parse: %s\n", pg_last_error_message());
        return 1;
    }
    if (pg_problem_solve(problem, &solution) != PG_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", pg_last_error_message());
        return 1;
    }
    printf("optimum %.6f argmax %zu stopping %llu rows %zu\n", pg_solution_optimum(solution),
           pg_solution_argmax_rank(solution),
           (unsigned long long)pg_solution_stopping_integer(solution),
           pg_solution_trace_len(solution));
    if (pg_solution_argmax_rank(solution) != 2 || pg_solution_stopping_integer(solution) != 16) {
        return 2;
    }
    char *json = pg_solution_report_json(solution);
    if (json == NULL || strstr(json, "\"argmax_rank\": 2") == NULL) {
        return 3;
    }
    pg_string_free(json);
    pg_solution_free(solution);
    pg_problem_free(problem);

    PgBridge bridge = {PG_BRIDGE_KIND_AFFINE, 1.0, 0.0};
    if (pg_solve_sequence(halves, NULL, bridge, 0.5, 100, &solution) != PG_STATUS_OK) {
        fprintf(stderr, "sequence: %s\n", pg_last_error_message());
        return 4;
    }
    PgTraceRow row;
    if (pg_solution_trace_row(solution, 0, &row) != PG_STATUS_OK || !row.updated) {
        return 5;
    }
    printf("sequence optimum %.6f argmax %zu version %s\n", pg_solution_optimum(solution),
           pg_solution_argmax_rank(solution), pg_version());
    pg_solution_free(solution);
    return 0;
}
