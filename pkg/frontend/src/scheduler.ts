/**
 * Learning-rate plateau scheduling and early stopping on a monitored
 * validation score (higher is better).
 */

export interface SchedulerConfig {
  initialLr: number;
  factor: number;
  patience: number;
  minLr: number;
}

export const DEFAULT_SCHEDULER: SchedulerConfig = {
  initialLr: 1e-3,
  factor: 0.1,
  patience: 10,
  minLr: 1e-7,
};

export class ReduceLROnPlateau {
  readonly config: SchedulerConfig;
  private lr: number;
  private best = -Infinity;
  private sinceImprovement = 0;

  constructor(config: Partial<SchedulerConfig> = {}) {
    this.config = { ...DEFAULT_SCHEDULER, ...config };
    this.lr = this.config.initialLr;
  }

  get learningRate(): number {
    return this.lr;
  }

  /** Record one epoch's score; returns the learning rate to use next. */
  step(score: number): number {
    if (score > this.best) {
      this.best = score;
      this.sinceImprovement = 0;
    } else {
      this.sinceImprovement += 1;
      if (this.sinceImprovement >= this.config.patience) {
        this.lr = Math.max(this.lr * this.config.factor, this.config.minLr);
        this.sinceImprovement = 0;
      }
    }
    return this.lr;
  }
}

export class EarlyStopping {
  readonly patience: number;
  readonly minDelta: number;
  private best = -Infinity;
  private sinceImprovement = 0;

  constructor(patience = 10, minDelta = 0) {
    this.patience = patience;
    this.minDelta = minDelta;
  }

  get bestScore(): number {
    return this.best;
  }

  /** Record one epoch's score; returns true when training should stop. */
  step(score: number): boolean {
    if (score > this.best + this.minDelta) {
      this.best = score;
      this.sinceImprovement = 0;
      return false;
    }
    this.sinceImprovement += 1;
    return this.sinceImprovement >= this.patience;
  }
}
