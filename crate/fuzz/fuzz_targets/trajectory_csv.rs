#![no_main]

use libfuzzer_sys::fuzz_target;
use spkf_nui::models::Trajectory;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(traj) = Trajectory::from_csv(text) {
        let back = Trajectory::from_csv(&traj.to_csv().unwrap()).unwrap();
        assert_eq!(back, traj);
    }
});
