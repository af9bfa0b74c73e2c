//! Raw client events go in, pseudonymized events come out. The same raw id
//! always maps to the same pseudonym under one key, and a different key
//! gives unrelated ids.
//!
//! cargo run --example ingest_and_anonymize

use cfrec::{anonymize, Pseudonymizer, RawEvent, RecordStore};

fn main() -> cfrec::Result<()> {
    let lines = [
        r#"{"user_id":"alice@example.org","deck_id":"algebra","kind":"visit","value":42.0,"timestamp":"2024-03-01T09:00:00Z"}"#,
        r#"{"user_id":"alice@example.org","deck_id":"algebra","kind":"rating","value":5,"timestamp":"2024-03-01T09:05:00Z"}"#,
        r#"{"user_id":"bob@example.org","deck_id":"geometry","kind":"like","timestamp":"2024-03-02T14:30:00Z"}"#,
    ];

    let pseudonymizer = Pseudonymizer::new("demo-secret")?;
    let mut store = RecordStore::new();
    for line in lines {
        let id = store.ingest_event(RawEvent::parse_line(line)?, &pseudonymizer)?;
        println!("accepted {id}");
    }
    for e in store.events() {
        println!("{}", e.to_json_line());
    }

    let a = anonymize("alice@example.org", b"demo-secret")?;
    let b = anonymize("alice@example.org", b"another-secret")?;
    println!("same key: {}", a == pseudonymizer.pseudonymize("alice@example.org"));
    println!("other key: {a} vs {b}");

    // Validation names the offending field.
    let bad = r#"{"user_id":"carol","deck_id":"algebra","kind":"rating","value":7,"timestamp":"2024-03-03T08:00:00Z"}"#;
    match RawEvent::parse_line(bad) {
        Ok(_) => unreachable!("out-of-range rating accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
