use std::collections::VecDeque;

use crate::ingest::ObjectClass;

use super::config::UndersampleConfig;

/// Streaming class-balance gate. Every window of `window` consecutive
/// offered samples passes at most `caps[c]` samples of class `c`; once a
/// class is at its cap, its newer samples are the ones dropped.
#[derive(Clone, Debug)]
pub struct Undersampler {
    config: UndersampleConfig,
    /// Outcome of the last `window - 1` offers: the class if it passed.
    recent: VecDeque<Option<ObjectClass>>,
    passed_in_window: [usize; ObjectClass::COUNT],
    passed: u64,
    dropped: u64,
}

impl Undersampler {
    pub fn new(config: UndersampleConfig) -> Self {
        Self {
            recent: VecDeque::with_capacity(config.window),
            config,
            passed_in_window: [0; ObjectClass::COUNT],
            passed: 0,
            dropped: 0,
        }
    }

    /// Whether a sample of `class` passes.
    pub fn offer(&mut self, class: ObjectClass) -> bool {
        let keep = self.passed_in_window[class.index()] < self.config.caps[class.index()];
        if keep {
            self.passed += 1;
        } else {
            self.dropped += 1;
        }
        if self.config.window > 1 {
            if self.recent.len() == self.config.window - 1 {
                if let Some(old) = self.recent.pop_front().flatten() {
                    self.passed_in_window[old.index()] -= 1;
                }
            }
            self.recent.push_back(keep.then_some(class));
            if keep {
                self.passed_in_window[class.index()] += 1;
            }
        }
        keep
    }

    /// Keeps the items that pass, in order.
    pub fn filter<T>(&mut self, items: Vec<(T, ObjectClass)>) -> Vec<(T, ObjectClass)> {
        items.into_iter().filter(|(_, c)| self.offer(*c)).collect()
    }

    pub fn passed(&self) -> u64 {
        self.passed
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gate(caps: [usize; 3]) -> Undersampler {
        Undersampler::new(UndersampleConfig { window: 100, caps })
    }

    #[test]
    fn cap_rule() {
        let mut u = gate([10, 10, 10]);
        let mut stream = vec![ObjectClass::Car; 50];
        stream.extend([ObjectClass::Pedestrian; 50]);
        let kept: Vec<_> = stream.iter().map(|&c| u.offer(c)).collect();
        assert_eq!(kept[..50].iter().filter(|&&k| k).count(), 10);
        // The oldest cars pass, the newest are dropped.
        assert!(kept[..10].iter().all(|&k| k) && kept[10..50].iter().all(|&k| !k));
        assert_eq!(u.passed() + u.dropped(), 100);
    }

    #[test]
    fn under_cap_stream_is_unchanged() {
        let mut u = gate([34, 34, 34]);
        let stream: Vec<_> = (0..300).map(|i| (i, ObjectClass::ALL[i % 3])).collect();
        assert_eq!(u.filter(stream.clone()), stream);
        assert_eq!(u.dropped(), 0);
    }

    #[test]
    fn all_car_stream_passes_cap_per_window() {
        let mut u = gate([34, 34, 34]);
        let kept: Vec<bool> = (0..1000).map(|_| u.offer(ObjectClass::Car)).collect();
        for w in kept.windows(100) {
            assert_eq!(w.iter().filter(|&&k| k).count(), 34);
        }
    }

    #[test]
    fn zero_cap_drops_class() {
        let mut u = gate([0, 5, 5]);
        assert!(!u.offer(ObjectClass::Car));
        assert!(u.offer(ObjectClass::Cyclist));
    }

    proptest! {
        #[test]
        fn every_window_respects_caps(
            classes in prop::collection::vec(0usize..3, 0..600),
            caps in prop::array::uniform3(0usize..40),
            window in 1usize..120,
        ) {
            let mut u = Undersampler::new(UndersampleConfig { window, caps });
            let kept: Vec<(usize, bool)> = classes.iter().map(|&c| (c, u.offer(ObjectClass::ALL[c]))).collect();
            // Counting oracle over every window of consecutive offers.
            for start in 0..kept.len() {
                let end = (start + window).min(kept.len());
                let mut n = [0usize; 3];
                for &(c, k) in &kept[start..end] {
                    n[c] += k as usize;
                }
                for c in 0..3 {
                    prop_assert!(n[c] <= caps[c]);
                }
            }
            prop_assert_eq!(u.passed() + u.dropped(), classes.len() as u64);
        }
    }
}
