//! Procedural generation of a paired intent-classification corpus.
//!
//! Each intent class owns a handful of utterance templates whose slots are
//! filled from shared word banks; the noisy side of every pair is the clean
//! side pushed through the corruption channel.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::noise::{apply_asr_noise, NoiseConfig};
use super::{Corpus, PairedExample};
use crate::seed::{stream, stream_seed};
use crate::{Error, Result};

const BANKS: &[(&str, &[&str])] = &[
    (
        "song",
        &[
            "thunder road",
            "bohemian rhapsody",
            "yellow submarine",
            "purple rain",
            "hey jude",
            "lose yourself",
        ],
    ),
    (
        "artist",
        &["the beatles", "queen", "prince", "adele", "eminem", "miles davis"],
    ),
    (
        "time",
        &["six am", "seven thirty", "noon", "five pm", "midnight", "nine oclock"],
    ),
    (
        "day",
        &["monday", "tuesday", "friday", "saturday", "tomorrow", "today"],
    ),
    (
        "city",
        &["london", "paris", "tokyo", "boston", "madrid", "sydney"],
    ),
    (
        "room",
        &["kitchen", "bedroom", "living room", "garage", "office", "hallway"],
    ),
    (
        "food",
        &["a pizza", "sushi", "a burger", "pad thai", "tacos", "a salad"],
    ),
    (
        "place",
        &[
            "the airport",
            "the office",
            "downtown",
            "the mall",
            "the station",
            "the harbor",
        ],
    ),
    (
        "person",
        &["mom", "alex", "the boss", "jamie", "grandma", "my brother"],
    ),
    (
        "event",
        &["meeting", "appointment", "call", "review", "standup", "dentist visit"],
    ),
];

const CLASSES: &[(&str, &[&str])] = &[
    (
        "play_music",
        &[
            "play {song} by {artist}",
            "put on some music from {artist}",
            "i want to hear {song} right now",
            "start playing {song} on the speaker",
            "play the new album by {artist} please",
            "queue up {song} for me",
        ],
    ),
    (
        "set_alarm",
        &[
            "set an alarm for {time}",
            "wake me up at {time} on {day}",
            "i need an alarm at {time} tomorrow",
            "set a backup alarm for {time}",
            "please wake me at {time}",
            "schedule my alarm for {time} on {day}",
        ],
    ),
    (
        "get_weather",
        &[
            "what is the weather like in {city}",
            "will it rain in {city} on {day}",
            "give me the forecast for {city}",
            "how cold is it in {city} today",
            "do i need an umbrella in {city}",
            "tell me the weather for {day} in {city}",
        ],
    ),
    (
        "control_lights",
        &[
            "turn on the lights in the {room}",
            "switch off the {room} lights",
            "dim the lights in the {room} please",
            "make the {room} a little brighter",
            "lights on in the {room}",
            "can you turn the {room} lamp off",
        ],
    ),
    (
        "ask_time",
        &[
            "what time is it right now",
            "tell me the current time in {city}",
            "do you know what time it is",
            "what is the time in {city} now",
            "give me the exact time please",
            "how late is it in {city}",
        ],
    ),
    (
        "order_food",
        &[
            "order {food} for dinner",
            "i want to order {food} tonight",
            "get me {food} from the usual place",
            "please order {food} for lunch",
            "can you order {food} for delivery",
            "i am hungry order {food}",
        ],
    ),
    (
        "navigate",
        &[
            "take me to {place}",
            "directions to {place} from here",
            "navigate to {place} avoiding traffic",
            "how do i get to {place}",
            "find the fastest route to {place}",
            "start navigation to {place} now",
        ],
    ),
    (
        "send_message",
        &[
            "send a message to {person}",
            "text {person} that i am running late",
            "write to {person} about the {event}",
            "message {person} saying hello",
            "tell {person} i will call back",
            "send {person} a quick note",
        ],
    ),
    (
        "check_calendar",
        &[
            "when is my next {event}",
            "check my calendar for {day}",
            "do i have a {event} on {day}",
            "what is on my schedule for {day}",
            "move my {event} to {day}",
            "remind me about the {event} on {day}",
        ],
    ),
    (
        "tell_joke",
        &[
            "tell me a funny joke",
            "make me laugh with a joke",
            "do you know any good jokes",
            "say something funny please",
            "tell me a joke about the {event}",
            "i need a joke right now",
        ],
    ),
];

/// Largest supported class count.
pub fn max_classes() -> usize {
    CLASSES.len()
}

fn bank(slot: &str) -> &'static [&'static str] {
    BANKS
        .iter()
        .find(|(name, _)| *name == slot)
        .map(|(_, words)| *words)
        .unwrap_or_else(|| panic!("template references unknown slot {slot}"))
}

/// Replace each `{slot}` word in the template with a uniform pick from that
/// slot's bank. Draws left to right.
fn fill_template<R: Rng>(template: &str, rng: &mut R) -> String {
    let mut words: Vec<&str> = Vec::new();
    for word in template.split_whitespace() {
        if let Some(slot) = word.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
            let options = bank(slot);
            words.push(options[rng.random_range(0..options.len())]);
        } else {
            words.push(word);
        }
    }
    words.join(" ")
}

/// Generate `num_classes * per_class` paired examples. Deterministic for a
/// fixed seed: one realization draws the template, its slot fills, the noisy
/// side, and the optional label flip in that order.
pub fn synthesize_corpus(
    num_classes: usize,
    per_class: usize,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Corpus> {
    if num_classes < 2 || num_classes > CLASSES.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "num_classes must be in 2..={}, got {num_classes}",
            CLASSES.len()
        )));
    }
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, stream::SYNTH));
    let flip_rate = noise.label_flip_rate();
    let mut examples = Vec::with_capacity(num_classes * per_class);
    let mut next_id = 0u64;
    for class in 0..num_classes {
        let templates = CLASSES[class].1;
        for _ in 0..per_class {
            let template = templates[rng.random_range(0..templates.len())];
            let clean = fill_template(template, &mut rng);
            let noisy = apply_asr_noise(&clean, noise, &mut rng);
            let mut label = class;
            if flip_rate > 0.0 && rng.random::<f64>() < flip_rate {
                // Reassign uniformly among the other classes.
                let r = rng.random_range(0..num_classes - 1);
                label = if r >= class { r + 1 } else { r };
            }
            examples.push(PairedExample {
                id: next_id,
                clean,
                noisy,
                label,
            });
            next_id += 1;
        }
    }
    let class_names = (0..num_classes)
        .map(|c| CLASSES[c].0.to_string())
        .collect();
    Corpus::new(examples, num_classes, class_names)
}
