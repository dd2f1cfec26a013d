use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use quiz_core::allocation::{allocation_pmf, AllocationPolicy};
use quiz_core::bank::{Answer, Item, ItemBank};
use quiz_core::log::read_log;
use quiz_service::store::QuestionView;
use quiz_service::{Persistence, ServiceError, SessionStore};

fn bank(bank_id: &str, n: usize) -> ItemBank {
    ItemBank {
        bank_id: bank_id.into(),
        title: format!("Bank {bank_id}"),
        items: (0..n)
            .map(|i| Item {
                item_id: format!("i{i:02}"),
                stem: format!("What is {i} + 1?"),
                answers: (0..4)
                    .map(|k| Answer {
                        text: format!("{}", i + k),
                        correct: k == 1,
                    })
                    .collect(),
                shuffle: true,
                times_answered: 0,
                times_correct: 0,
            })
            .collect(),
    }
}

fn ticking_clock(store: &mut SessionStore) -> Arc<AtomicI64> {
    let t = Arc::new(AtomicI64::new(0));
    let c = t.clone();
    store.set_clock(move || epoch() + chrono::Duration::seconds(c.fetch_add(1, Ordering::SeqCst)));
    t
}

fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2012, 1, 9, 8, 0, 0).unwrap()
}

fn store() -> SessionStore {
    let mut s = SessionStore::seeded(AllocationPolicy::default(), 5);
    s.add_bank(bank("calc", 12)).unwrap();
    ticking_clock(&mut s);
    s
}

/// Presented index of the right (or a wrong) answer for a served question.
fn presented(store: &SessionStore, q: &QuestionView, correct: bool) -> usize {
    let item = store.bank(&q.bank_id).unwrap().item(&q.item_id).unwrap();
    let target = &item.answers.iter().find(|a| a.correct == correct).unwrap().text;
    q.answers.iter().position(|a| a == target).unwrap()
}

fn answer(store: &mut SessionStore, student: &str, correct: bool) -> quiz_service::store::AnswerResult {
    let q = store.next_question(student, "calc").unwrap();
    let idx = presented(store, &q, correct);
    store.submit_answer(student, "calc", &q.question_token, idx).unwrap()
}

#[test]
fn registration_ids_are_unique_slugs() {
    let mut s = store();
    let a = s.register("Ada Lovelace", true).unwrap();
    let b = s.register("ada lovelace", false).unwrap();
    let c = s.register("Ada  Lovelace", false).unwrap();
    assert_eq!(a.student_id, "ada-lovelace");
    assert_eq!(b.student_id, "ada-lovelace-2");
    assert_eq!(c.student_id, "ada--lovelace");
    assert!(a.consent && !b.consent);
    assert!(matches!(s.register("   ", true), Err(ServiceError::EmptyName)));
    assert_eq!(s.register("!!", false).unwrap().student_id, "student");
}

#[test]
fn unknown_student_and_bank() {
    let mut s = store();
    let id = s.register("x", false).unwrap().student_id;
    assert!(matches!(s.next_question("nobody", "calc"), Err(ServiceError::UnknownStudent(_))));
    assert!(matches!(s.next_question(&id, "algebra"), Err(ServiceError::UnknownBank(_))));
    assert!(matches!(s.get_grade(&id, "algebra"), Err(ServiceError::UnknownBank(_))));
    assert!(matches!(s.add_bank(bank("calc", 3)), Err(ServiceError::DuplicateBank(_))));
}

#[test]
fn fresh_student_allocation_matches_pmf_at_zero() {
    let mut s = store();
    let id = s.register("new", false).unwrap().student_id;
    let want = allocation_pmf(&AllocationPolicy::default(), 12, 0.0).unwrap();
    assert_eq!(s.allocation(&id, "calc").unwrap(), want);
    // Easiest rank gets the largest share at grade zero.
    assert!(want[0] > want[11]);

    let mut legacy = SessionStore::seeded(AllocationPolicy::uniform(), 1);
    legacy.add_bank(bank("calc", 12)).unwrap();
    let id = legacy.register("old", false).unwrap().student_id;
    for p in legacy.allocation(&id, "calc").unwrap() {
        assert!((p - 1.0 / 12.0).abs() < 1e-15);
    }
}

#[test]
fn pending_question_is_reserved_until_answered() {
    let mut s = store();
    let id = s.register("p", false).unwrap().student_id;
    let q1 = s.next_question(&id, "calc").unwrap();
    let q2 = s.next_question(&id, "calc").unwrap();
    assert_eq!(q1, q2);
    assert_eq!(q1.question_token.len(), 32);
    assert_eq!(q1.answers.len(), 4);

    let idx = presented(&s, &q1, true);
    s.submit_answer(&id, "calc", &q1.question_token, idx).unwrap();
    let again = s.submit_answer(&id, "calc", &q1.question_token, idx);
    assert!(matches!(again, Err(ServiceError::StaleToken)));
    assert_eq!(s.records().len(), 1);

    let q3 = s.next_question(&id, "calc").unwrap();
    assert_ne!(q3.question_token, q1.question_token);
    assert!(matches!(
        s.submit_answer(&id, "calc", &q3.question_token, 4),
        Err(ServiceError::AnswerIndex { index: 4, n_answers: 4 })
    ));
    assert!(matches!(
        s.submit_answer(&id, "calc", "deadbeef", 0),
        Err(ServiceError::StaleToken)
    ));
    // Failed submissions leave the question pending.
    assert_eq!(s.next_question(&id, "calc").unwrap(), q3);
}

#[test]
fn presented_index_maps_through_the_shuffle() {
    let mut s = store();
    let id = s.register("m", false).unwrap().student_id;
    for _ in 0..20 {
        let q = s.next_question(&id, "calc").unwrap();
        let idx = presented(&s, &q, true);
        let r = s.submit_answer(&id, "calc", &q.question_token, idx).unwrap();
        assert!(r.correct);
        let logged = s.records().last().unwrap();
        assert_eq!(logged.chosen_index, 1);
        assert_eq!(logged.item_id, q.item_id);
    }
}

#[test]
fn first_answers_grade() {
    let mut s = store();
    let a = s.register("a", false).unwrap().student_id;
    let b = s.register("b", false).unwrap().student_id;
    let r = answer(&mut s, &a, true);
    assert_eq!((r.correct, r.raw_score, r.grade, r.answered_count), (true, 1.0, 0.125, 1));
    let r = answer(&mut s, &b, false);
    assert_eq!((r.correct, r.raw_score, r.grade, r.answered_count), (false, -0.5, 0.0, 1));
}

#[test]
fn six_right_two_wrong_in_window() {
    let mut s = store();
    let id = s.register("w", false).unwrap().student_id;
    for correct in [false, false, true, true, true, true, true, true, false, false] {
        answer(&mut s, &id, correct);
    }
    let g = s.get_grade(&id, "calc").unwrap();
    assert_eq!((g.raw_score, g.grade, g.answered_count), (5.0, 0.625, 10));
}

#[test]
fn grade_before_any_answer_is_zero() {
    let mut s = store();
    let id = s.register("z", false).unwrap().student_id;
    let g = s.get_grade(&id, "calc").unwrap();
    assert_eq!((g.raw_score, g.grade, g.answered_count), (0.0, 0.0, 0));
}

#[test]
fn restart_replays_log_and_registry() {
    let dir = tempfile::tempdir().unwrap();
    let persistence = Persistence {
        log_path: Some(dir.path().join("responses.jsonl")),
        registry_path: Some(dir.path().join("students.jsonl")),
    };
    let (ids, grades, counts) = {
        let mut s = store();
        s.open(&persistence).unwrap();
        let ids: Vec<String> = ["Ann", "Bo", "Cy"]
            .iter()
            .map(|n| s.register(n, true).unwrap().student_id)
            .collect();
        for k in 0..30 {
            answer(&mut s, &ids[k % 3], k % 4 != 0);
        }
        // Left pending across the restart.
        s.next_question(&ids[0], "calc").unwrap();
        let grades: Vec<_> = ids.iter().map(|i| s.get_grade(i, "calc").unwrap()).collect();
        let counts: Vec<_> = s
            .bank("calc")
            .unwrap()
            .items
            .iter()
            .map(|i| (i.times_answered, i.times_correct))
            .collect();
        (ids, grades, counts)
    };
    assert_eq!(read_log(persistence.log_path.as_ref().unwrap()).unwrap().len(), 30);

    let mut s = SessionStore::seeded(AllocationPolicy::default(), 99);
    s.add_bank(bank("calc", 12)).unwrap();
    s.open(&persistence).unwrap();
    for (id, g) in ids.iter().zip(&grades) {
        assert_eq!(s.get_grade(id, "calc").unwrap(), *g);
        let reg = s.registration(id).unwrap();
        assert!(reg.consent);
    }
    let replayed: Vec<_> = s
        .bank("calc")
        .unwrap()
        .items
        .iter()
        .map(|i| (i.times_answered, i.times_correct))
        .collect();
    assert_eq!(replayed, counts);
    // New registrations do not collide with replayed ones.
    assert_eq!(s.register("Ann", false).unwrap().student_id, "ann-2");
    // The restarted store keeps appending.
    answer(&mut s, &ids[0], true);
    assert_eq!(read_log(persistence.log_path.as_ref().unwrap()).unwrap().len(), 31);
}

#[test]
fn replay_rejects_tampered_log() {
    let mut s = store();
    let id = s.register("t", false).unwrap().student_id;
    for c in [true, true, false] {
        answer(&mut s, &id, c);
    }
    let mut records = s.records().to_vec();
    records[1].grade_after = 0.5;
    let mut fresh = SessionStore::seeded(AllocationPolicy::default(), 1);
    fresh.add_bank(bank("calc", 12)).unwrap();
    match fresh.replay(&records) {
        Err(ServiceError::Replay { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a replay error, got {other:?}"),
    }

    let mut records = s.records().to_vec();
    records[0].bank_id = "gone".into();
    let mut fresh = SessionStore::seeded(AllocationPolicy::default(), 1);
    fresh.add_bank(bank("calc", 12)).unwrap();
    assert!(matches!(fresh.replay(&records), Err(ServiceError::Replay { line: 1, .. })));
}

#[test]
fn export_is_half_open_and_round_trips() {
    let mut s = store();
    let id = s.register("e", false).unwrap().student_id;
    for k in 0..6 {
        answer(&mut s, &id, k % 2 == 0);
    }
    let all: Vec<_> = s.export(None, None).into_iter().cloned().collect();
    assert_eq!(all, s.records());
    let (t1, t3) = (all[1].timestamp, all[3].timestamp);
    let mid = s.export(Some(t1), Some(t3));
    assert_eq!(mid.len(), 2);
    assert_eq!(mid[0], &all[1]);
    assert!(s.export(Some(t3), Some(t3)).is_empty());
    assert!(s.export(Some(epoch() + chrono::Duration::days(1)), None).is_empty());

    let text: String = all.iter().map(|r| r.to_json_line() + "\n").collect();
    let parsed = quiz_core::log::parse_log(text.as_bytes()).unwrap();
    assert_eq!(parsed, all);
}

#[test]
fn bank_errors_name_the_item() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = bank("bad", 3);
    bad.items[2].answers[0].correct = true;
    std::fs::write(dir.path().join("bad.json"), bad.to_json_pretty()).unwrap();
    let mut s = SessionStore::seeded(AllocationPolicy::default(), 1);
    let err = s.load_bank_dir(dir.path()).unwrap_err().to_string();
    assert!(err.contains("i02"), "{err}");
}

#[test]
fn bank_directory_loads_json_files_only() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.json"), bank("b", 3).to_json_pretty()).unwrap();
    std::fs::write(dir.path().join("a.json"), bank("a", 5).to_json_pretty()).unwrap();
    std::fs::write(dir.path().join("notes.txt"), "not a bank").unwrap();
    let mut s = SessionStore::seeded(AllocationPolicy::default(), 1);
    assert_eq!(s.load_bank_dir(dir.path()).unwrap(), vec!["a", "b"]);
    let summary = s.banks();
    assert_eq!(summary[0].n_items, 5);
    assert_eq!(summary[1].title, "Bank b");
}

#[test]
fn seeded_stores_serve_identical_sessions() {
    let run = || {
        let mut s = store();
        let id = s.register("d", false).unwrap().student_id;
        (0..15)
            .map(|k| {
                let q = s.next_question(&id, "calc").unwrap();
                let idx = presented(&s, &q, k % 3 != 0);
                s.submit_answer(&id, "calc", &q.question_token, idx).unwrap();
                (q.item_id, q.answers)
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
