from cleo.application import Application

from pkcam.commands.ablate import AblateCommand
from pkcam.commands.cost import CostCommand
from pkcam.commands.evaluate import EvalCommand
from pkcam.commands.gradcheck import GradcheckCommand
from pkcam.commands.train import TrainCommand


def main() -> int:
    app = Application("pkcam")
    app.add(TrainCommand())
    app.add(EvalCommand())
    app.add(CostCommand())
    app.add(GradcheckCommand())
    app.add(AblateCommand())
    exit_code = app.run()
    return exit_code


if __name__ == "__main__":
    main()
