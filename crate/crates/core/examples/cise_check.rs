//! Checks the prescription model, then the two ways of repairing it.

use causalkv::cise;
use causalkv::fmke::fmke_model;

fn main() {
    let model = fmke_model();
    print!("{}", cise::check_all(&model).unwrap().render());

    let synced = model
        .clone()
        .with_sync_pair("process_prescription", "process_prescription");
    println!(
        "\nwith process_prescription synchronised: pass={}",
        cise::check_all(&synced).unwrap().passed()
    );

    let relaxed = model.without_invariant("no-duplicates").unwrap();
    println!(
        "without no-duplicates: pass={}",
        cise::check_all(&relaxed).unwrap().passed()
    );
}
