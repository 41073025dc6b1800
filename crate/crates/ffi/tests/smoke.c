#include <stdio.h>
#include <string.h>

#include "mentigo.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        MentigoStatus s_ = (call);                                         \
        if (s_ != MENTIGO_STATUS_OK) {                                     \
            const char *m_ = mentigo_last_error();                         \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, m_ ? m_ : "");    \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    MentigoKb *kb = NULL;
    MentigoEngine *engine = NULL;
    char *json = NULL;
    uint32_t stages, states, strategies;
    uint8_t ids[8];
    size_t n = 0;

    CHECK(mentigo_kb_fixture(&kb));
    CHECK(mentigo_kb_counts(kb, &stages, &states, &strategies));
    printf("counts %u %u %u\n", stages, states, strategies);
    CHECK(mentigo_kb_strategies_for_state(kb, 22, ids, sizeof ids, &n));
    printf("state 22 ->");
    for (size_t i = 0; i < n; i++) printf(" %u", ids[i]);
    printf("\n");

    CHECK(mentigo_engine_scripted(kb, NULL, 1, true, &engine));
    CHECK(mentigo_session_create(engine, "Low-Carbon Campus", &json));
    const char *p = strstr(json, "\"id\":\"");
    char id[64] = {0};
    if (!p) return 2;
    sscanf(p + 6, "%63[^\"]", id);
    mentigo_string_free(json);

    CHECK(mentigo_session_post(engine, id, "We could plant trees?", &json));
    printf("round %s\n", strstr(json, "\"chosen_strategy\":18") ? "ok" : json);
    mentigo_string_free(json);

    CHECK(mentigo_engine_advance_ms(engine, 60000));
    CHECK(mentigo_session_tick(engine, id, &json));
    printf("nudge %s\n", json ? "yes" : "no");
    mentigo_string_free(json);

    if (mentigo_session_get(engine, "s-none", &json) != MENTIGO_STATUS_NOT_FOUND) return 3;
    printf("error %s\n", mentigo_last_error());

    mentigo_engine_free(engine);
    mentigo_kb_free(kb);
    return 0;
}
