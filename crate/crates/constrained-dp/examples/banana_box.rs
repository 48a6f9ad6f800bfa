//! Conditioning vs imaging on a four-world belief state.
//!
//! The prior rules out w1 and w4; learning the event {w3, w4} by
//! conditioning concentrates everything on w3, while imaging transports each
//! excluded world's mass to its closest world inside the event, reviving w4.

use constrained_dp::belief::banana_box;

fn main() {
    let (state, event) = banana_box();
    println!("prior:       {:?}", state.probs());
    println!("event mass:  {}", state.prob_of(&event));

    let conditioned = state.condition(&event).unwrap();
    println!("conditioned: {:?}", conditioned.probs());

    let imaged = state.image(&event).unwrap();
    println!("imaged:      {:?}", imaged.probs());

    // conditioning preserves relative beliefs inside the event; imaging can
    // give mass to a world the prior excluded
    assert_eq!(conditioned.probs()[3], 0.0);
    assert!(imaged.probs()[3] > 0.0);
}
